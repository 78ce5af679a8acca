#pragma once

// Checkpoint archive: string-keyed, shape-tagged float64 arrays plus a small
// string metadata table. Layout (little-endian) is documented in
// docs/formats.md.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gcan/autodiff.hpp"
#include "gcan/nn.hpp"

namespace gcan {

struct ArchiveArray {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
};

struct Archive {
    std::map<std::string, std::string> meta;
    std::vector<ArchiveArray> arrays;

    const ArchiveArray* find(const std::string& name) const;
    const std::string& meta_value(const std::string& key) const;
};

void save_archive(const Archive& archive, const std::filesystem::path& path);
Archive load_archive(const std::filesystem::path& path);

// Snapshot of a parameter list, prefixed with `prefix` when non-empty.
void append_params(Archive& archive, const nn::ParamList& params, const std::string& prefix = "");
// Copies archived values into the parameters (names must match, shapes must agree).
void restore_params(const Archive& archive, const nn::ParamList& params, const std::string& prefix = "");

}  // namespace gcan
