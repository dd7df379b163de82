#include "bravl/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bravl {

namespace {

constexpr char kMatrixMagic[4] = {'B', 'V', 'L', 'M'};
constexpr char kLabelMagic[4] = {'B', 'V', 'L', 'L'};
constexpr std::uint8_t kVersionF32 = 0x01;
constexpr std::uint8_t kVersionF64 = 0x02;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_matrix_impl(const std::filesystem::path& path, const Matrix& m, std::uint8_t version) {
    if (!m.all_finite()) throw std::runtime_error("refusing to serialize non-finite matrix: " + path.string());
    std::string buf;
    const std::size_t elem = version == kVersionF32 ? 4 : 8;
    buf.reserve(4 + 1 + 8 + m.size() * elem);
    buf.append(kMatrixMagic, 4);
    buf.push_back(static_cast<char>(version));
    put_u32(buf, static_cast<std::uint32_t>(m.rows));
    put_u32(buf, static_cast<std::uint32_t>(m.cols));
    if (version == kVersionF32) {
        for (double v : m.data) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(buf, bits);
        }
    } else {
        for (double v : m.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            put_u64(buf, bits);
        }
    }
    write_file(path, buf);
}

} // namespace

void write_matrix_f32(const std::filesystem::path& path, const Matrix& m) {
    write_matrix_impl(path, m, kVersionF32);
}

void write_matrix_f64(const std::filesystem::path& path, const Matrix& m) {
    write_matrix_impl(path, m, kVersionF64);
}

Matrix read_matrix(const std::filesystem::path& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    if (bytes.size() < 13 || std::memcmp(bytes.data(), kMatrixMagic, 4) != 0)
        throw std::runtime_error("not a matrix container: " + path.string());
    const std::uint8_t version = bytes[4];
    if (version != kVersionF32 && version != kVersionF64)
        throw std::runtime_error("unsupported matrix container version: " + path.string());
    const std::uint32_t rows = get_u32(bytes.data() + 5);
    const std::uint32_t cols = get_u32(bytes.data() + 9);
    const std::size_t elem = version == kVersionF32 ? 4 : 8;
    const std::size_t expected = 13 + static_cast<std::size_t>(rows) * cols * elem;
    if (bytes.size() != expected) throw std::runtime_error("truncated matrix container: " + path.string());
    Matrix m(rows, cols);
    const unsigned char* p = bytes.data() + 13;
    for (std::size_t i = 0; i < m.size(); ++i, p += elem) {
        if (version == kVersionF32) {
            const std::uint32_t bits = get_u32(p);
            float f;
            std::memcpy(&f, &bits, 4);
            m.data[i] = static_cast<double>(f);
        } else {
            const std::uint64_t bits = get_u64(p);
            double d;
            std::memcpy(&d, &bits, 8);
            m.data[i] = d;
        }
    }
    return m;
}

void write_labels(const std::filesystem::path& path, const LabelVector& labels) {
    labels.validate();
    std::string buf;
    buf.reserve(4 + 1 + 8 + labels.size() * 4);
    buf.append(kLabelMagic, 4);
    buf.push_back(static_cast<char>(kVersionF32));
    put_u32(buf, static_cast<std::uint32_t>(labels.size()));
    put_u32(buf, labels.n_classes);
    for (std::uint32_t e : labels.entries) put_u32(buf, e);
    write_file(path, buf);
}

LabelVector read_labels(const std::filesystem::path& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    if (bytes.size() < 13 || std::memcmp(bytes.data(), kLabelMagic, 4) != 0)
        throw std::runtime_error("not a label container: " + path.string());
    if (bytes[4] != kVersionF32) throw std::runtime_error("unsupported label container version: " + path.string());
    const std::uint32_t count = get_u32(bytes.data() + 5);
    LabelVector labels;
    labels.n_classes = get_u32(bytes.data() + 9);
    if (bytes.size() != 13 + static_cast<std::size_t>(count) * 4)
        throw std::runtime_error("truncated label container: " + path.string());
    labels.entries.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) labels.entries[i] = get_u32(bytes.data() + 13 + 4 * i);
    labels.validate();
    return labels;
}

void Manifest::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

void Manifest::set_u64(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

bool Manifest::has(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return true;
    return false;
}

const std::string& Manifest::get(const std::string& key) const {
    for (const auto& [k, v] : entries_)
        if (k == key) return v;
    throw std::runtime_error("manifest key missing: " + key);
}

std::string Manifest::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

std::uint64_t Manifest::get_u64(const std::string& key) const { return std::stoull(get(key)); }

double Manifest::get_double(const std::string& key) const { return std::stod(get(key)); }

std::vector<std::string> Manifest::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_)
        if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
}

void Manifest::save(const std::filesystem::path& path) const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << "=" << v << "\n";
    write_file(path, os.str());
}

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
    Manifest m;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed manifest line: " + line);
        m.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return m;
}

std::string join_u32(const std::vector<std::uint32_t>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::vector<std::uint32_t> split_u32(const std::string& s) {
    std::vector<std::uint32_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ','))
        if (!tok.empty()) out.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
    return out;
}

void write_roi_map(const std::filesystem::path& path, const RoiMap& roi) {
    std::ostringstream os;
    for (std::size_t v = 0; v < roi.size(); ++v) os << v << "," << roi.roi_of_voxel[v] << "\n";
    write_file(path, os.str());
}

RoiMap read_roi_map(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open ROI map: " + path.string());
    RoiMap roi;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error("malformed ROI map line: " + line);
        const std::size_t idx = std::stoul(line.substr(0, comma));
        if (idx != roi.roi_of_voxel.size()) throw std::runtime_error("ROI map indices must be dense and ordered");
        roi.roi_of_voxel.push_back(line.substr(comma + 1));
    }
    return roi;
}

void save_dataset(const TrimodalDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);

    Manifest man;
    man.set("format", "bravl-dataset");
    man.set("version", "1");
    man.set_u64("repeats_per_stimulus", ds.repeats_per_stimulus);
    man.set("seen_classes", join_u32(ds.split.seen_classes));
    man.set("novel_classes", join_u32(ds.split.novel_classes));

    write_matrix_f32(dir / "seen_brain.bvlm", ds.seen.brain);
    write_matrix_f32(dir / "seen_visual.bvlm", ds.seen.visual);
    write_matrix_f32(dir / "seen_textual.bvlm", ds.seen.textual);
    write_labels(dir / "seen_labels.bvll", ds.seen.labels);
    man.set("seen.brain", "seen_brain.bvlm");
    man.set("seen.visual", "seen_visual.bvlm");
    man.set("seen.textual", "seen_textual.bvlm");
    man.set("seen.labels", "seen_labels.bvll");

    write_matrix_f32(dir / "novel_visual.bvlm", ds.novel.visual);
    write_matrix_f32(dir / "novel_textual.bvlm", ds.novel.textual);
    write_labels(dir / "novel_labels.bvll", ds.novel.labels);
    man.set("novel.visual", "novel_visual.bvlm");
    man.set("novel.textual", "novel_textual.bvlm");
    man.set("novel.labels", "novel_labels.bvll");

    if (ds.test) {
        write_matrix_f32(dir / "test_brain.bvlm", ds.test->brain);
        write_labels(dir / "test_labels.bvll", ds.test->labels);
        man.set("test.brain", "test_brain.bvlm");
        man.set("test.labels", "test_labels.bvll");
    }
    for (std::size_t i = 0; i < ds.extra.size(); ++i) {
        const std::string base = "extra_" + std::to_string(i);
        if (ds.extra[i].visual) {
            write_matrix_f32(dir / (base + "_visual.bvlm"), *ds.extra[i].visual);
            man.set("extra." + std::to_string(i) + ".visual", base + "_visual.bvlm");
        }
        if (ds.extra[i].textual) {
            write_matrix_f32(dir / (base + "_textual.bvlm"), *ds.extra[i].textual);
            man.set("extra." + std::to_string(i) + ".textual", base + "_textual.bvlm");
        }
    }
    if (ds.roi_map) {
        write_roi_map(dir / "roi_map.txt", *ds.roi_map);
        man.set("roi_map", "roi_map.txt");
    }
    man.save(dir / "manifest.txt");
}

TrimodalDataset load_dataset(const std::filesystem::path& dir) {
    const Manifest man = Manifest::load(dir / "manifest.txt");
    if (man.get_or("format", "") != "bravl-dataset")
        throw std::runtime_error("not a dataset directory: " + dir.string());

    TrimodalDataset ds;
    ds.repeats_per_stimulus = man.get_u64("repeats_per_stimulus");
    ds.split.seen_classes = split_u32(man.get("seen_classes"));
    ds.split.novel_classes = split_u32(man.get("novel_classes"));

    ds.seen.brain = read_matrix(dir / man.get("seen.brain"));
    ds.seen.visual = read_matrix(dir / man.get("seen.visual"));
    ds.seen.textual = read_matrix(dir / man.get("seen.textual"));
    ds.seen.labels = read_labels(dir / man.get("seen.labels"));
    ds.novel.visual = read_matrix(dir / man.get("novel.visual"));
    ds.novel.textual = read_matrix(dir / man.get("novel.textual"));
    ds.novel.labels = read_labels(dir / man.get("novel.labels"));
    if (man.has("test.brain")) {
        TestSplit test;
        test.brain = read_matrix(dir / man.get("test.brain"));
        test.labels = read_labels(dir / man.get("test.labels"));
        ds.test = std::move(test);
    }
    for (std::size_t i = 0;; ++i) {
        const std::string kv = "extra." + std::to_string(i) + ".visual";
        const std::string kt = "extra." + std::to_string(i) + ".textual";
        if (!man.has(kv) && !man.has(kt)) break;
        ExtraPool p;
        if (man.has(kv)) p.visual = read_matrix(dir / man.get(kv));
        if (man.has(kt)) p.textual = read_matrix(dir / man.get(kt));
        ds.extra.push_back(std::move(p));
    }
    if (man.has("roi_map")) ds.roi_map = read_roi_map(dir / man.get("roi_map"));

    ds.validate();
    return ds;
}

} // namespace bravl
