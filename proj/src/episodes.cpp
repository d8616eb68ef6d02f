#include "fewshot/episodes.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fewshot/rng.hpp"
#include "json.hpp"

namespace fewshot {

std::string to_string(Split s) {
    switch (s) {
        case Split::base: return "base";
        case Split::validation: return "validation";
        case Split::novel: return "novel";
    }
    throw std::logic_error("unknown split");
}

Split split_from_string(const std::string& s) {
    if (s == "base") return Split::base;
    if (s == "validation") return Split::validation;
    if (s == "novel") return Split::novel;
    throw std::invalid_argument("unknown split name: " + s);
}

// ---- Permutation ------------------------------------------------------------

Permutation::Permutation(std::vector<int> mapping) : map_(std::move(mapping)) {
    const int n = static_cast<int>(map_.size());
    if (n == 0) throw std::invalid_argument("permutation must be non-empty");
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (int v : map_) {
        if (v < 1 || v > n || seen[static_cast<std::size_t>(v - 1)]) {
            throw std::invalid_argument("mapping is not a bijection on {1..n}");
        }
        seen[static_cast<std::size_t>(v - 1)] = true;
    }
}

Permutation Permutation::identity(int n) {
    if (n < 1) throw std::invalid_argument("identity permutation needs n >= 1");
    std::vector<int> m(static_cast<std::size_t>(n));
    std::iota(m.begin(), m.end(), 1);
    return Permutation(std::move(m));
}

int Permutation::image_of(int c) const {
    if (c < 1 || c > size()) throw std::invalid_argument("label out of range");
    return map_[static_cast<std::size_t>(c - 1)];
}

bool Permutation::is_identity() const {
    for (int c = 1; c <= size(); ++c) {
        if (map_[static_cast<std::size_t>(c - 1)] != c) return false;
    }
    return true;
}

Permutation Permutation::inverse() const {
    std::vector<int> inv(map_.size());
    for (int c = 1; c <= size(); ++c) {
        inv[static_cast<std::size_t>(map_[static_cast<std::size_t>(c - 1)] - 1)] = c;
    }
    return Permutation(std::move(inv));
}

Permutation Permutation::compose(const Permutation& other) const {
    if (size() != other.size()) throw std::invalid_argument("permutation size mismatch");
    std::vector<int> m(map_.size());
    for (int c = 1; c <= size(); ++c) {
        m[static_cast<std::size_t>(c - 1)] = image_of(other.image_of(c));
    }
    return Permutation(std::move(m));
}

// ---- synthetic pools --------------------------------------------------------

SyntheticPool generate_synthetic_pool_with_means(int n_classes, int dim, int per_class,
                                                 double sigma, std::uint64_t seed,
                                                 Split split) {
    if (n_classes < 2) throw std::invalid_argument("need at least 2 classes");
    if (dim < 1) throw std::invalid_argument("dim must be positive");
    if (per_class < 2) throw std::invalid_argument("need at least 2 examples per class");
    if (sigma < 0.0) throw std::invalid_argument("sigma must be non-negative");

    RandomStream rng(seed);
    SyntheticPool out;
    out.pool.dim = static_cast<std::size_t>(dim);
    out.pool.split = split;
    out.pool.classes.reserve(static_cast<std::size_t>(n_classes));
    out.class_means.reserve(static_cast<std::size_t>(n_classes));

    for (int c = 0; c < n_classes; ++c) {
        std::vector<double> mean(static_cast<std::size_t>(dim));
        for (double& m : mean) m = rng.uniform(-1.0, 1.0);

        ClassData cls;
        cls.global_class_id = static_cast<std::uint32_t>(c);
        cls.examples.reserve(static_cast<std::size_t>(per_class));
        for (int e = 0; e < per_class; ++e) {
            std::vector<double> x(static_cast<std::size_t>(dim));
            for (int d = 0; d < dim; ++d) {
                x[static_cast<std::size_t>(d)] =
                    mean[static_cast<std::size_t>(d)] + sigma * rng.normal();
            }
            cls.examples.push_back(std::move(x));
        }
        out.pool.classes.push_back(std::move(cls));
        out.class_means.push_back(std::move(mean));
    }
    return out;
}

ClassPool generate_synthetic_pool(int n_classes, int dim, int per_class, double sigma,
                                  std::uint64_t seed, Split split) {
    return generate_synthetic_pool_with_means(n_classes, dim, per_class, sigma, seed, split)
        .pool;
}

// ---- episode sampling -------------------------------------------------------

Episode sample_episode(const ClassPool& pool, const EpisodeSpec& spec, std::uint64_t seed) {
    if (spec.n_way < 2) throw std::invalid_argument("n_way must be at least 2");
    if (spec.k_shot < 1) throw std::invalid_argument("k_shot must be at least 1");
    if (spec.q_query < 1) throw std::invalid_argument("q_query must be at least 1");

    const std::size_t n = static_cast<std::size_t>(spec.n_way);
    if (pool.classes.size() < n) {
        throw std::length_error("pool has fewer classes than n_way");
    }
    const std::size_t need = static_cast<std::size_t>(spec.k_shot + spec.q_query);

    RandomStream rng(seed);

    // Distinct classes via a partial Fisher-Yates pass.
    std::vector<std::size_t> class_idx(pool.classes.size());
    std::iota(class_idx.begin(), class_idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng.below(class_idx.size() - i);
        std::swap(class_idx[i], class_idx[j]);
    }

    // Uniformly random bijection class -> label.
    std::vector<int> labels(n);
    std::iota(labels.begin(), labels.end(), 1);
    rng.shuffle(labels);

    Episode ep;
    ep.spec = spec;
    ep.assignment.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ep.assignment[static_cast<std::size_t>(labels[i] - 1)] =
            pool.classes[class_idx[i]].global_class_id;
    }

    std::vector<std::size_t> chosen_by_label(n);  // pool index of the class behind label c
    for (std::size_t i = 0; i < n; ++i) {
        chosen_by_label[static_cast<std::size_t>(labels[i] - 1)] = class_idx[i];
    }

    ep.support.reserve(n * static_cast<std::size_t>(spec.k_shot));
    ep.query.reserve(n * static_cast<std::size_t>(spec.q_query));
    for (int c = 1; c <= spec.n_way; ++c) {
        const ClassData& cls = pool.classes[chosen_by_label[static_cast<std::size_t>(c - 1)]];
        if (cls.examples.size() < need) {
            throw std::length_error("class has too few examples for k_shot + q_query");
        }
        std::vector<std::size_t> ex_idx(cls.examples.size());
        std::iota(ex_idx.begin(), ex_idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < need; ++i) {
            const std::size_t j = i + rng.below(ex_idx.size() - i);
            std::swap(ex_idx[i], ex_idx[j]);
        }
        for (int k = 0; k < spec.k_shot; ++k) {
            ep.support.push_back({cls.examples[ex_idx[static_cast<std::size_t>(k)]], c});
        }
        for (int q = 0; q < spec.q_query; ++q) {
            ep.query.push_back(
                {cls.examples[ex_idx[static_cast<std::size_t>(spec.k_shot + q)]], c});
        }
    }
    return ep;
}

Episode apply_permutation(const Episode& ep, const Permutation& pi) {
    if (pi.size() != ep.n_way()) {
        throw std::invalid_argument("permutation size does not match n_way");
    }
    Episode out = ep;
    for (Example& e : out.support) e.y = pi.image_of(e.y);
    for (Example& e : out.query) e.y = pi.image_of(e.y);
    for (int c = 1; c <= ep.n_way(); ++c) {
        out.assignment[static_cast<std::size_t>(pi.image_of(c) - 1)] =
            ep.assignment[static_cast<std::size_t>(c - 1)];
    }
    return out;
}

std::vector<Permutation> enumerate_permutations(int n) {
    if (n < 1) throw std::invalid_argument("n must be at least 1");
    if (n > 8) throw std::length_error("refusing to enumerate more than 8! permutations");
    std::vector<int> m(static_cast<std::size_t>(n));
    std::iota(m.begin(), m.end(), 1);
    std::vector<Permutation> out;
    do {
        out.push_back(Permutation(m));
    } while (std::next_permutation(m.begin(), m.end()));
    return out;
}

std::vector<Permutation> rotated_permutations(int n) {
    if (n < 1) throw std::invalid_argument("n must be at least 1");
    std::vector<Permutation> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int gamma = 1; gamma <= n; ++gamma) {
        std::vector<int> m(static_cast<std::size_t>(n));
        for (int c = 1; c <= n; ++c) {
            m[static_cast<std::size_t>(c - 1)] = ((c + gamma) % n) + 1;
        }
        out.push_back(Permutation(std::move(m)));
    }
    return out;
}

std::map<int, std::int64_t> fixed_point_histogram(int n) {
    std::map<int, std::int64_t> hist;
    for (const Permutation& p : enumerate_permutations(n)) {
        int fixed = 0;
        for (int c = 1; c <= n; ++c) {
            if (p.image_of(c) == c) ++fixed;
        }
        ++hist[fixed];
    }
    return hist;
}

// ---- binary pool files ------------------------------------------------------

namespace {

constexpr char kPoolMagic[4] = {'F', 'S', 'C', 'P'};
constexpr std::uint32_t kPoolVersion = 1;

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32_le(std::string& out, float f) {
    put_u32_le(out, std::bit_cast<std::uint32_t>(f));
}

// Byte reader that reports the offset of whatever it failed to read.
class ByteReader {
public:
    ByteReader(std::string data, std::string path)
        : data_(std::move(data)), path_(std::move(path)) {}

    std::size_t offset() const { return pos_; }

    std::uint32_t u32() {
        require(4, "u32");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)]);
        }
        pos_ += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    void magic(const char expect[4]) {
        require(4, "magic");
        if (std::memcmp(data_.data() + pos_, expect, 4) != 0) {
            fail("bad magic");
        }
        pos_ += 4;
    }

    void expect_end() {
        if (pos_ != data_.size()) fail("trailing bytes");
    }

    [[noreturn]] void fail(const std::string& what) const {
        std::ostringstream msg;
        msg << path_ << ": " << what << " at byte offset " << pos_;
        throw std::runtime_error(msg.str());
    }

private:
    void require(std::size_t n, const char* what) const {
        if (pos_ + n > data_.size()) {
            std::ostringstream msg;
            msg << path_ << ": truncated " << what << " at byte offset " << pos_;
            throw std::runtime_error(msg.str());
        }
    }

    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return std::move(buf).str();
}

void spew(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path);
}

}  // namespace

void write_pool_file(const std::string& path, const std::vector<ClassData>& classes,
                     std::size_t dim) {
    std::string out;
    out.append(kPoolMagic, 4);
    put_u32_le(out, kPoolVersion);
    put_u32_le(out, static_cast<std::uint32_t>(classes.size()));
    put_u32_le(out, static_cast<std::uint32_t>(dim));
    for (const ClassData& cls : classes) {
        put_u32_le(out, cls.global_class_id);
        put_u32_le(out, static_cast<std::uint32_t>(cls.examples.size()));
        for (const auto& x : cls.examples) {
            if (x.size() != dim) throw std::invalid_argument("example dimension mismatch");
            for (double v : x) put_f32_le(out, static_cast<float>(v));
        }
    }
    spew(path, out);
}

std::vector<ClassData> read_pool_file(const std::string& path, std::size_t* dim_out) {
    ByteReader r(slurp(path), path);
    r.magic(kPoolMagic);
    const std::uint32_t version = r.u32();
    if (version != kPoolVersion) {
        std::ostringstream msg;
        msg << path << ": unsupported pool version " << version << " at byte offset 4";
        throw std::runtime_error(msg.str());
    }
    const std::uint32_t n_classes = r.u32();
    const std::uint32_t dim = r.u32();
    if (dim == 0) r.fail("dim must be positive");

    std::vector<ClassData> classes;
    classes.reserve(n_classes);
    for (std::uint32_t c = 0; c < n_classes; ++c) {
        ClassData cls;
        cls.global_class_id = r.u32();
        const std::uint32_t n_ex = r.u32();
        cls.examples.reserve(n_ex);
        for (std::uint32_t e = 0; e < n_ex; ++e) {
            std::vector<double> x(dim);
            for (std::uint32_t d = 0; d < dim; ++d) x[d] = static_cast<double>(r.f32());
            cls.examples.push_back(std::move(x));
        }
        classes.push_back(std::move(cls));
    }
    r.expect_end();
    if (dim_out) *dim_out = dim;
    return classes;
}

void write_split_manifest(const std::string& path, const SplitManifest& manifest) {
    nlohmann::json j;
    j["version"] = 1;
    j["base"] = manifest.base;
    j["validation"] = manifest.validation;
    j["novel"] = manifest.novel;
    spew(path, j.dump(2) + "\n");
}

SplitManifest read_split_manifest(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    SplitManifest m;
    m.base = j.at("base").get<std::vector<std::uint32_t>>();
    m.validation = j.at("validation").get<std::vector<std::uint32_t>>();
    m.novel = j.at("novel").get<std::vector<std::uint32_t>>();
    return m;
}

ClassPool load_pool_split(const std::string& pool_path, const std::string& manifest_path,
                          Split split) {
    std::size_t dim = 0;
    std::vector<ClassData> classes = read_pool_file(pool_path, &dim);
    const SplitManifest manifest = read_split_manifest(manifest_path);
    const std::vector<std::uint32_t>* ids = &manifest.base;
    if (split == Split::validation) ids = &manifest.validation;
    if (split == Split::novel) ids = &manifest.novel;

    std::set<std::uint32_t> wanted(ids->begin(), ids->end());
    ClassPool pool;
    pool.dim = dim;
    pool.split = split;
    for (ClassData& cls : classes) {
        if (wanted.count(cls.global_class_id)) {
            wanted.erase(cls.global_class_id);
            pool.classes.push_back(std::move(cls));
        }
    }
    if (!wanted.empty()) {
        throw std::runtime_error(manifest_path + ": manifest lists class ids missing from " +
                                 pool_path);
    }
    return pool;
}

}  // namespace fewshot
