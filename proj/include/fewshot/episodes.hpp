#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fewshot {

enum class Split { base, validation, novel };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ClassData {
    std::uint32_t global_class_id = 0;
    std::vector<std::vector<double>> examples;  // each of length dim
};

// Immutable after construction; safe to share across threads.
struct ClassPool {
    std::vector<ClassData> classes;
    std::size_t dim = 0;
    Split split = Split::base;
};

struct EpisodeSpec {
    int n_way = 5;
    int k_shot = 1;
    int q_query = 15;
};

// Labels are 1-based everywhere: y is in {1..N}.
struct Example {
    std::vector<double> x;
    int y = 0;
};

// Immutable after construction.
struct Episode {
    EpisodeSpec spec;
    std::vector<Example> support;            // N*K items, exactly K per label
    std::vector<Example> query;              // N*q items, exactly q per label
    std::vector<std::uint32_t> assignment;   // assignment[c-1] = global class id of label c
    int n_way() const { return spec.n_way; }
};

// Bijection on {1..N}. All interfaces speak 1-based labels.
class Permutation {
public:
    explicit Permutation(std::vector<int> mapping);
    static Permutation identity(int n);

    int size() const { return static_cast<int>(map_.size()); }
    int image_of(int c) const;  // pi(c)
    bool is_identity() const;
    Permutation inverse() const;
    Permutation compose(const Permutation& other) const;  // (this ∘ other)(c) = this(other(c))
    const std::vector<int>& mapping() const { return map_; }

    bool operator==(const Permutation& o) const { return map_ == o.map_; }
    bool operator<(const Permutation& o) const { return map_ < o.map_; }

private:
    std::vector<int> map_;  // map_[c-1] = pi(c)
};

struct SyntheticPool {
    ClassPool pool;
    std::vector<std::vector<double>> class_means;  // generator's true means, for diagnostics
};

// Class means drawn uniformly from [-1,1]^dim, examples mean + sigma * N(0, I).
// Fully determined by the arguments; sigma = 0 collapses every example onto its mean.
SyntheticPool generate_synthetic_pool_with_means(int n_classes, int dim, int per_class,
                                                 double sigma, std::uint64_t seed,
                                                 Split split = Split::base);
ClassPool generate_synthetic_pool(int n_classes, int dim, int per_class, double sigma,
                                  std::uint64_t seed, Split split = Split::base);

// N distinct classes, labels assigned by a uniformly random bijection
// (Fisher-Yates), support/query drawn without replacement and disjoint.
Episode sample_episode(const ClassPool& pool, const EpisodeSpec& spec, std::uint64_t seed);

// Relabels y -> pi(y) in support and query and re-keys the assignment.
// Feature vectors and item order are untouched.
Episode apply_permutation(const Episode& ep, const Permutation& pi);

// All n! permutations in lexicographic order of the mapping arrays. n <= 8.
std::vector<Permutation> enumerate_permutations(int n);

// The n rotations pi_gamma(c) = ((c + gamma) mod n) + 1, gamma = 1..n.
// Exactly one of them is the identity.
std::vector<Permutation> rotated_permutations(int n);

// Number of permutations of [n] by fixed-point count; zero-count bins omitted.
std::map<int, std::int64_t> fixed_point_histogram(int n);

// ---- pool files ------------------------------------------------------------
//
// Binary layout: magic "FSCP", then little-endian u32 version (= 1),
// u32 class_count, u32 dim; per class u32 global_class_id, u32 example_count,
// then example_count*dim little-endian f32 values (widened to f64 on load).
// The JSON sidecar manifest lists the global_class_ids of each split.

struct SplitManifest {
    std::vector<std::uint32_t> base, validation, novel;
};

void write_pool_file(const std::string& path, const std::vector<ClassData>& classes,
                     std::size_t dim);
std::vector<ClassData> read_pool_file(const std::string& path, std::size_t* dim_out);

void write_split_manifest(const std::string& path, const SplitManifest& manifest);
SplitManifest read_split_manifest(const std::string& path);

ClassPool load_pool_split(const std::string& pool_path, const std::string& manifest_path,
                          Split split);

}  // namespace fewshot
