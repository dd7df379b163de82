#ifndef BRAVL_IO_HPP
#define BRAVL_IO_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "bravl/dataset.hpp"
#include "bravl/matrix.hpp"

namespace bravl {

// Matrix container: magic "BVLM", one version byte, u32 LE row count, u32 LE
// column count, then row-major IEEE-754 little-endian payload. Version 0x01
// stores 32-bit floats (feature data), version 0x02 stores 64-bit doubles
// (checkpoints, which must restore training bit-exactly).
void write_matrix_f32(const std::filesystem::path& path, const Matrix& m);
void write_matrix_f64(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

// Label container: magic "BVLL", version 0x01, u32 count, u32 n_classes,
// then count u32 class indices.
void write_labels(const std::filesystem::path& path, const LabelVector& labels);
LabelVector read_labels(const std::filesystem::path& path);

// Ordered key=value text file. Order is preserved so written bytes are
// deterministic.
class Manifest {
public:
    void set(const std::string& key, const std::string& value);
    void set_u64(const std::string& key, std::uint64_t value);
    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

std::string join_u32(const std::vector<std::uint32_t>& v);
std::vector<std::uint32_t> split_u32(const std::string& s);

// Dataset directory layout: manifest.txt plus one container file per
// matrix/label block, ROI map as "voxel_index,roi_name" lines.
void save_dataset(const TrimodalDataset& ds, const std::filesystem::path& dir);
TrimodalDataset load_dataset(const std::filesystem::path& dir);

void write_roi_map(const std::filesystem::path& path, const RoiMap& roi);
RoiMap read_roi_map(const std::filesystem::path& path);

} // namespace bravl

#endif
