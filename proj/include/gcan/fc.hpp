#pragma once

// Functional-connectivity data model: atlas partitions, validated FC
// matrices, labeled cohorts with splits, and the CSV formats they live in.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "gcan/matrix.hpp"

namespace gcan {

enum class Label { HC, SCD, MCI };
enum class Split { Train, Val, Test };

inline constexpr Label kAllLabels[] = {Label::HC, Label::SCD, Label::MCI};

std::string_view to_string(Label label);
std::string_view to_string(Split split);
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

struct Network {
    std::string name;
    int region_count = 0;

    bool operator==(const Network&) const = default;
};

// Ordered named networks; region r belongs to the network whose cumulative
// range contains it.
class AtlasPartition {
public:
    explicit AtlasPartition(std::vector<Network> networks);

    // CER=18, CON=32, DMN=34, OCC=22, FPN=21, SMN=33 (160 regions).
    static AtlasPartition default_partition();

    const std::vector<Network>& networks() const noexcept { return networks_; }
    int network_count() const noexcept { return static_cast<int>(networks_.size()); }
    int total_regions() const noexcept { return total_; }
    int offset(int network) const { return offsets_.at(static_cast<std::size_t>(network)); }
    int region_count(int network) const { return networks_.at(static_cast<std::size_t>(network)).region_count; }
    int network_of(int region) const;
    const std::string& network_name_of(int region) const;

    bool operator==(const AtlasPartition& other) const { return networks_ == other.networks_; }

private:
    std::vector<Network> networks_;
    std::vector<int> offsets_;
    int total_ = 0;
};

using AtlasPtr = std::shared_ptr<const AtlasPartition>;

AtlasPtr make_atlas(AtlasPartition atlas);
// CSV `network,region_count`, one network per line in order (header optional).
AtlasPartition load_atlas(const std::filesystem::path& path);
void save_atlas(const AtlasPartition& atlas, const std::filesystem::path& path);

// Symmetric matrix over the atlas regions with unit diagonal and entries in
// [-1, 1]. Every constructor enforces those invariants.
class FcMatrix {
public:
    // Throws ParameterError unless `values` already satisfies the invariants.
    FcMatrix(AtlasPtr atlas, Matrix values);

    // Symmetrizes as (M + M^T)/2, clamps into [-1, 1] and forces the
    // diagonal to 1; each repair that changed something is described in
    // `repairs` when given.
    static FcMatrix repaired(AtlasPtr atlas, Matrix values, std::vector<std::string>* repairs = nullptr);
    static FcMatrix identity(AtlasPtr atlas);

    const Matrix& values() const noexcept { return values_; }
    const AtlasPartition& atlas() const noexcept { return *atlas_; }
    const AtlasPtr& atlas_ptr() const noexcept { return atlas_; }
    int size() const noexcept { return static_cast<int>(values_.rows()); }
    double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }

private:
    AtlasPtr atlas_;
    Matrix values_;
};

bool same_atlas(const FcMatrix& a, const FcMatrix& b);

struct LoadedFc {
    FcMatrix fc;
    std::vector<std::string> repairs;
};

// Comma-separated N x N matrix, one row per line, no header.
LoadedFc load_fc(const std::filesystem::path& path, AtlasPtr atlas);
void save_fc(const FcMatrix& fc, const std::filesystem::path& path);

struct Subject {
    std::string id;
    Label label = Label::HC;
    FcMatrix fc;
};

class Cohort {
public:
    explicit Cohort(AtlasPtr atlas);

    // Throws ParameterError for duplicate ids and AtlasMismatchError when the
    // subject's FC uses another atlas.
    void add(Subject subject, Split split);

    const AtlasPartition& atlas() const noexcept { return *atlas_; }
    const AtlasPtr& atlas_ptr() const noexcept { return atlas_; }
    const std::vector<Subject>& subjects() const noexcept { return subjects_; }
    std::size_t size() const noexcept { return subjects_.size(); }
    Split split_of(const std::string& id) const;
    const Subject& subject(const std::string& id) const;

    std::vector<const Subject*> select(Label label, Split split) const;
    std::vector<const Subject*> select(Split split) const;
    std::size_t count(Label label, Split split) const { return select(label, split).size(); }

private:
    AtlasPtr atlas_;
    std::vector<Subject> subjects_;
    std::map<std::string, Split> splits_;
    std::map<std::string, std::size_t> index_;
};

// Entrywise mean of the FC of every subject with `label` in `split`.
FcMatrix mean_fc(const Cohort& cohort, Label label, Split split);

// fc + symmetric Gaussian noise with per-entry standard deviation sigma. The
// upper triangle (and diagonal) is drawn i.i.d. and mirrored to the lower
// triangle. The result is not clamped.
Matrix add_noise(const FcMatrix& fc, double sigma, std::uint64_t seed);

// Writes `<dir>/fc/<id>.csv` per subject and `<dir>/manifest.csv`
// (`id,label,split,fc_path`, paths relative to the manifest).
void save_cohort(const Cohort& cohort, const std::filesystem::path& dir);
// Relative fc_path entries resolve against the manifest's directory.
Cohort load_cohort(const std::filesystem::path& manifest, AtlasPtr atlas);

}  // namespace gcan
