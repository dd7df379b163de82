#include "bravl/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace bravl {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] so the log is finite
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

Matrix Rng::normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = stddev * normal();
    return m;
}

std::string Rng::save_state() const {
    std::ostringstream os;
    os << gen_;
    os << " " << (has_spare_ ? 1 : 0);
    char buf[40];
    std::snprintf(buf, sizeof buf, " %a", spare_);
    os << buf;
    return os.str();
}

void Rng::load_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    int spare_flag = 0;
    std::string hex;
    is >> spare_flag >> hex;
    if (is.fail()) throw std::runtime_error("Rng::load_state: malformed state string");
    has_spare_ = spare_flag != 0;
    spare_ = std::strtod(hex.c_str(), nullptr);
}

} // namespace bravl
