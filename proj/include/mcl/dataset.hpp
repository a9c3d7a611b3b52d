#pragma once

// On-disk dataset layout:
//
//   <dir>/meta.txt             "pattern <n>\nsplit <name>\n"
//   <dir>/images/<id>.pgm      binary P5, 8-bit, 50 x 50
//   <dir>/landmarks/<id>.txt   n lines "x y" (normalized patch coordinates)

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mcl/errors.hpp"
#include "mcl/geometry.hpp"
#include "mcl/image.hpp"

namespace mcl {

struct Sample {
    Image image;  // 50 x 50, raw 8-bit
    Shape shape;
    std::string id;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
    std::vector<Sample> samples;
    LabelingPattern pattern{5, 4};
    std::string split = "train";

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }

    void sort_by_id() {
        std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
    }

    /// Throws unless every sample matches the pattern and ids are unique.
    void validate() const {
        std::set<std::string> ids;
        for (const auto& s : samples) {
            if (s.shape.landmarks() != static_cast<std::size_t>(pattern.n)) {
                throw ContractError("sample '" + s.id + "' has " + std::to_string(s.shape.landmarks()) +
                                    " landmarks, dataset pattern is " + std::to_string(pattern.n));
            }
            if (!ids.insert(s.id).second) throw ContractError("duplicate sample id '" + s.id + "'");
        }
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline std::string format_coordinate(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline void write_landmarks(std::ostream& out, const Shape& s) {
    for (std::size_t j = 0; j < s.landmarks(); ++j) {
        out << format_coordinate(s.coords[2 * j]) << ' ' << format_coordinate(s.coords[2 * j + 1]) << '\n';
    }
}

inline Shape read_landmarks(const std::filesystem::path& path, int n) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing landmark file '" + path.string() + "'");
    Shape s;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto space = line.find(' ');
        double x = 0.0, y = 0.0;
        const char* b = line.data();
        const char* e = line.data() + line.size();
        bool ok = space != std::string::npos;
        if (ok) {
            auto r1 = std::from_chars(b, b + space, x);
            auto r2 = std::from_chars(b + space + 1, e, y);
            ok = r1.ec == std::errc() && r1.ptr == b + space && r2.ec == std::errc() && r2.ptr == e;
        }
        if (!ok) throw LoadError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected \"x y\"");
        s.coords.push_back(x);
        s.coords.push_back(y);
    }
    if (s.landmarks() != static_cast<std::size_t>(n)) {
        throw LoadError("'" + path.string() + "' has " + std::to_string(s.landmarks()) + " landmarks, expected " +
                        std::to_string(n));
    }
    return s;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "landmarks");
    {
        std::ofstream meta(dir / "meta.txt", std::ios::binary | std::ios::trunc);
        if (!meta) throw Error("cannot write '" + (dir / "meta.txt").string() + "'");
        meta << "pattern " << ds.pattern.n << "\nsplit " << ds.split << "\n";
    }
    for (const auto& s : ds.samples) {
        write_pgm(s.image, (dir / "images" / (s.id + ".pgm")).string());
        std::ofstream lm(dir / "landmarks" / (s.id + ".txt"), std::ios::binary | std::ios::trunc);
        if (!lm) throw Error("cannot write landmarks for '" + s.id + "'");
        write_landmarks(lm, s.shape);
    }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream meta(dir / "meta.txt");
    if (!meta) throw LoadError("dataset '" + dir.string() + "' has no meta.txt");
    Dataset ds;
    std::string key;
    int n = 0;
    if (!(meta >> key >> n) || key != "pattern") throw LoadError("'" + (dir / "meta.txt").string() + "': first line must be \"pattern <n>\"");
    if (!is_supported_pattern(n)) throw LoadError("'" + (dir / "meta.txt").string() + "': unsupported pattern " + std::to_string(n));
    ds.pattern = pattern_for(n);
    if (!(meta >> key >> ds.split) || key != "split") throw LoadError("'" + (dir / "meta.txt").string() + "': second line must be \"split <name>\"");

    const fs::path images = dir / "images";
    if (!fs::exists(images)) return ds;
    for (const auto& entry : fs::directory_iterator(images)) {
        if (entry.path().extension() != ".pgm") continue;
        Sample s;
        s.id = entry.path().stem().string();
        s.image = read_pgm(entry.path().string());
        if (s.image.width != 50 || s.image.height != 50) {
            throw LoadError("'" + entry.path().string() + "' is " + std::to_string(s.image.width) + "x" +
                            std::to_string(s.image.height) + ", expected a 50x50 face patch");
        }
        s.shape = read_landmarks(dir / "landmarks" / (s.id + ".txt"), n);
        ds.samples.push_back(std::move(s));
    }
    ds.sort_by_id();
    return ds;
}

}  // namespace mcl
