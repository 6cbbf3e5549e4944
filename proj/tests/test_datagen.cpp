#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "mla/datagen.hpp"
#include "mla/errors.hpp"
#include "test_util.hpp"

using namespace mla;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "mla_test_datagen" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

// Foreground = saturated pixels. Cue colors keep a per-pixel channel spread
// above ~110 after contrast and noise; backgrounds stay below ~55.
std::vector<uint8_t> foreground_mask(const DomainSample& s, int hw) {
    std::vector<uint8_t> m(static_cast<size_t>(hw), 0);
    for (int p = 0; p < hw; ++p) {
        int r = s.image[static_cast<size_t>(p)];
        int g = s.image[static_cast<size_t>(hw + p)];
        int b = s.image[static_cast<size_t>(2 * hw + p)];
        int hi = std::max({r, g, b}), lo = std::min({r, g, b});
        m[static_cast<size_t>(p)] = (hi - lo > 60) ? 1 : 0;
    }
    return m;
}

std::array<double, 3> mean_foreground_color(const DomainSample& s, int hw) {
    auto m = foreground_mask(s, hw);
    std::array<double, 3> sum{0, 0, 0};
    int n = 0;
    for (int p = 0; p < hw; ++p) {
        if (!m[static_cast<size_t>(p)]) continue;
        ++n;
        for (int c = 0; c < 3; ++c) sum[static_cast<size_t>(c)] += s.image[static_cast<size_t>(c * hw + p)];
    }
    REQUIRE(n > 0);
    for (auto& v : sum) v /= n;
    return sum;
}

// Translation- and scale-normalized 8x8 resample of the foreground mask:
// centroid-centered window sized by the RMS radius of the mask.
std::array<double, 64> shape_signature(const DomainSample& s, int size) {
    const int hw = size * size;
    auto m = foreground_mask(s, hw);
    double mx = 0, my = 0;
    int n = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (m[static_cast<size_t>(y * size + x)]) {
                mx += x;
                my += y;
                ++n;
            }
    REQUIRE(n > 0);
    mx /= n;
    my /= n;
    double msq = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (m[static_cast<size_t>(y * size + x)])
                msq += (x - mx) * (x - mx) + (y - my) * (y - my);
    double half = 2.0 * std::sqrt(msq / n);
    std::array<double, 64> sig{};
    const double step = 2 * half / 8;
    for (int gy = 0; gy < 8; ++gy) {
        for (int gx = 0; gx < 8; ++gx) {
            double acc = 0;  // supersample the cell so coarse cells average, not alias
            for (int sy = 0; sy < 4; ++sy) {
                for (int sx = 0; sx < 4; ++sx) {
                    int px = static_cast<int>(
                        std::floor(mx - half + gx * step + (sx + 0.5) * step / 4));
                    int py = static_cast<int>(
                        std::floor(my - half + gy * step + (sy + 0.5) * step / 4));
                    acc += px >= 0 && px < size && py >= 0 && py < size &&
                           m[static_cast<size_t>(py * size + px)];
                }
            }
            sig[static_cast<size_t>(gy * 8 + gx)] = acc / 16.0;
        }
    }
    return sig;
}

// Nearest-centroid over arbitrary-dimension feature vectors.
template <size_t N>
struct Centroids {
    std::map<int, std::array<double, N>> sum;
    std::map<int, int> count;
    void add(int cls, const std::array<double, N>& f) {
        auto& s = sum[cls];
        for (size_t i = 0; i < N; ++i) s[i] += f[i];
        ++count[cls];
    }
    int predict(const std::array<double, N>& f) const {
        int best = -1;
        double best_d = 0;
        for (const auto& [cls, s] : sum) {
            double d = 0;
            int c = count.at(cls);
            for (size_t i = 0; i < N; ++i) {
                double diff = f[i] - s[i] / c;
                d += diff * diff;
            }
            if (best < 0 || d < best_d) {
                best = cls;
                best_d = d;
            }
        }
        return best;
    }
};

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
    SynthSpec spec;
    spec.samples_per_domain_per_class = 2;
    DomainDataset a = generate(spec);
    DomainDataset b = generate(spec);
    REQUIRE(a.samples.size() == b.samples.size());
    bool same = true;
    for (size_t i = 0; i < a.samples.size(); ++i) same = same && a.samples[i].image == b.samples[i].image;
    CHECK(same);

    SynthSpec other = spec;
    other.seed = 17;
    DomainDataset c = generate(other);
    bool any_diff = false;
    for (size_t i = 0; i < a.samples.size(); ++i) any_diff = any_diff || a.samples[i].image != c.samples[i].image;
    CHECK(any_diff);
}

TEST_CASE("sample counts, labels, and ordering are domain-major") {
    SynthSpec spec;
    spec.n_classes = 3;
    spec.samples_per_domain_per_class = 4;
    DomainDataset ds = generate(spec);
    CHECK(ds.n_domains == 4);
    CHECK(ds.n_classes == 3);
    CHECK(ds.height == 32);
    CHECK(ds.width == 32);
    CHECK(ds.domain_names == std::vector<std::string>{"flat", "stripes", "checker", "speckle"});
    REQUIRE(ds.samples.size() == 4u * 3u * 4u);
    for (int d = 0; d < 4; ++d)
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 4; ++i) {
                const auto& s = ds.samples[static_cast<size_t>(d * 12 + k * 4 + i)];
                CHECK(s.domain_label == d);
                CHECK(s.class_label == k);
                CHECK(s.image.size() == 3u * 32u * 32u);
            }
}

TEST_CASE("default styles cycle with shifted palettes past four domains") {
    auto styles = default_styles(6);
    REQUIRE(styles.size() == 6);
    for (int i = 0; i < 6; ++i) CHECK(styles[static_cast<size_t>(i)].cue_rotation == i);
    CHECK(styles[4].name == "flat_4");
    CHECK(styles[4].texture == styles[0].texture);
    CHECK(styles[4].bg_a != styles[0].bg_a);
    CHECK_THROWS_AS((void)default_styles(0), InputError);
}

TEST_CASE("generate validates its spec") {
    SynthSpec spec;
    spec.image_size = 15;
    CHECK_THROWS_AS((void)generate(spec), InputError);
    spec = SynthSpec{};
    spec.n_classes = 1;
    CHECK_THROWS_AS((void)generate(spec), InputError);
    spec = SynthSpec{};
    spec.n_classes = 6;
    CHECK_THROWS_AS((void)generate(spec), InputError);
    spec = SynthSpec{};
    spec.samples_per_domain_per_class = 0;
    CHECK_THROWS_AS((void)generate(spec), InputError);
    spec = SynthSpec{};
    spec.spurious_strength = 1.5;
    CHECK_THROWS_AS((void)generate(spec), InputError);
}

TEST_CASE("leave-one-out split partitions samples and keeps label spaces") {
    SynthSpec spec;
    spec.samples_per_domain_per_class = 3;
    DomainDataset ds = generate(spec);
    auto [train, test] = split_leave_one_out(ds, "checker");
    CHECK(train.samples.size() + test.samples.size() == ds.samples.size());
    CHECK(test.samples.size() == 5u * 3u);
    for (const auto& s : test.samples) CHECK(s.domain_label == 2);
    for (const auto& s : train.samples) CHECK(s.domain_label != 2);
    CHECK(train.n_domains == 4);
    CHECK(test.n_domains == 4);
    CHECK(train.n_classes == 5);
    CHECK(train.domain_names == ds.domain_names);
    CHECK_THROWS_AS((void)split_leave_one_out(ds, "nosuch"), InputError);
}

TEST_CASE("dataset file round trip is exact and the size formula holds") {
    fs::path dir = fresh_dir("roundtrip");
    SynthSpec spec;
    spec.n_classes = 4;
    spec.samples_per_domain_per_class = 2;
    spec.image_size = 16;
    DomainDataset ds = generate(spec);
    fs::path file = dir / "data.mldg1";
    save_dataset(ds, file.string());

    CHECK(fs::file_size(file) == 21 + ds.samples.size() * (4 + 3u * 16u * 16u));

    DomainDataset back = load_dataset(file.string());
    CHECK(back.n_classes == ds.n_classes);
    CHECK(back.n_domains == ds.n_domains);
    CHECK(back.height == 16);
    CHECK(back.width == 16);
    REQUIRE(back.samples.size() == ds.samples.size());
    bool same = true;
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        same = same && back.samples[i].image == ds.samples[i].image &&
               back.samples[i].class_label == ds.samples[i].class_label &&
               back.samples[i].domain_label == ds.samples[i].domain_label;
    }
    CHECK(same);
    // generated names are not persisted; loaded names are positional
    CHECK(back.domain_names[2] == "domain_2");

    // saving the loaded copy reproduces the bytes
    fs::path file2 = dir / "data2.mldg1";
    save_dataset(back, file2.string());
    CHECK(slurp(file) == slurp(file2));
}

TEST_CASE("corrupt dataset files are rejected") {
    fs::path dir = fresh_dir("corrupt");
    SynthSpec spec;
    spec.samples_per_domain_per_class = 1;
    spec.image_size = 16;
    DomainDataset ds = generate(spec);
    fs::path file = dir / "data.mldg1";
    save_dataset(ds, file.string());
    std::string bytes = slurp(file);

    auto write_variant = [&](const std::string& b) {
        std::ofstream out(dir / "bad.mldg1", std::ios::binary | std::ios::trunc);
        out << b;
    };

    SUBCASE("bad magic") {
        std::string b = bytes;
        b[0] = 'X';
        write_variant(b);
        CHECK_THROWS_AS((void)load_dataset((dir / "bad.mldg1").string()), FormatError);
    }
    SUBCASE("truncated payload") {
        write_variant(bytes.substr(0, bytes.size() - 7));
        CHECK_THROWS_AS((void)load_dataset((dir / "bad.mldg1").string()), FormatError);
    }
    SUBCASE("truncated header") {
        write_variant(bytes.substr(0, 12));
        CHECK_THROWS_AS((void)load_dataset((dir / "bad.mldg1").string()), FormatError);
    }
    SUBCASE("trailing bytes") {
        write_variant(bytes + "zz");
        CHECK_THROWS_AS((void)load_dataset((dir / "bad.mldg1").string()), FormatError);
    }
    SUBCASE("class label out of range") {
        std::string b = bytes;
        b[21] = 9;  // first sample's class u16 lo byte; header declares 5 classes
        write_variant(b);
        CHECK_THROWS_AS((void)load_dataset((dir / "bad.mldg1").string()), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS((void)load_dataset((dir / "nope.mldg1").string()), IoError);
    }
}

TEST_CASE("batch tensor normalizes bytes to [-1, 1] and labels line up") {
    SynthSpec spec;
    spec.samples_per_domain_per_class = 1;
    spec.image_size = 16;
    DomainDataset ds = generate(spec);
    Tensor t = batch_tensor(ds, {0, 6});
    CHECK(t.shape() == std::vector<int>{2, 3, 16, 16});
    auto d = t.data();
    const auto& img0 = ds.samples[0].image;
    bool ok = true;
    for (size_t p = 0; p < img0.size(); ++p)
        ok = ok && d[p] == (img0[p] / 255.0 - 0.5) / 0.5;
    CHECK(ok);
    for (double v : d) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
    CHECK(batch_labels(ds, {0, 6, 11}) ==
          std::vector<int>{ds.samples[0].class_label, ds.samples[6].class_label,
                           ds.samples[11].class_label});
    CHECK_THROWS_AS((void)batch_tensor(ds, {}), InputError);
    CHECK_THROWS_AS((void)batch_tensor(ds, {999}), InputError);
}

// With the cue fully spurious, a color-only model aces the domain it was fit
// on, collapses on the held-out domain (the cue rotates), while a color-blind
// shape model transfers. This is the property the whole benchmark rests on.
TEST_CASE("color cue misleads across domains while shape transfers") {
    SynthSpec spec;
    spec.spurious_strength = 1.0;
    spec.samples_per_domain_per_class = 12;
    spec.seed = 11;
    DomainDataset ds = generate(spec);
    const int hw = ds.height * ds.width;

    Centroids<3> color_d0;          // fit on domain 0 only
    Centroids<3> color_pool;        // fit on train domains 0..2
    Centroids<64> shape_pool;       // fit on train domains 0..2
    for (const auto& s : ds.samples) {
        if (s.domain_label == 0) color_d0.add(s.class_label, mean_foreground_color(s, hw));
        if (s.domain_label <= 2) {
            color_pool.add(s.class_label, mean_foreground_color(s, hw));
            shape_pool.add(s.class_label, shape_signature(s, ds.height));
        }
    }

    int n_d0 = 0, ok_d0 = 0;
    int n_tgt = 0, ok_color_d0 = 0, ok_color_pool = 0, ok_shape = 0;
    for (const auto& s : ds.samples) {
        if (s.domain_label == 0) {
            ++n_d0;
            ok_d0 += color_d0.predict(mean_foreground_color(s, hw)) == s.class_label;
        }
        if (s.domain_label == 3) {
            ++n_tgt;
            auto col = mean_foreground_color(s, hw);
            ok_color_d0 += color_d0.predict(col) == s.class_label;
            ok_color_pool += color_pool.predict(col) == s.class_label;
            ok_shape += shape_pool.predict(shape_signature(s, ds.height)) == s.class_label;
        }
    }
    REQUIRE(n_d0 == 60);
    REQUIRE(n_tgt == 60);
    CHECK(static_cast<double>(ok_d0) / n_d0 >= 0.95);            // cue is easy in-domain
    CHECK(static_cast<double>(ok_color_d0) / n_tgt <= 0.30);     // and wrong out-of-domain
    CHECK(static_cast<double>(ok_color_pool) / n_tgt <= 0.30);   // pooling does not rescue it
    CHECK(static_cast<double>(ok_shape) / n_tgt > 0.90);         // geometry is domain-stable
}

TEST_CASE("spurious strength controls how often the cue fires") {
    // At strength 0 the cue color is uniform over the palette, so it cannot
    // encode class+rotation systematically; at 1 it always does.
    SynthSpec spec;
    spec.spurious_strength = 1.0;
    spec.samples_per_domain_per_class = 10;
    spec.seed = 4;
    DomainDataset strong = generate(spec);
    spec.spurious_strength = 0.0;
    DomainDataset weak = generate(spec);
    const int hw = strong.height * strong.width;

    // palette reference: in the strong set, class k in domain 0 carries cue k
    Centroids<3> pal;
    for (int k = 0; k < 5; ++k)
        pal.add(k, mean_foreground_color(strong.samples[static_cast<size_t>(k * 10)], hw));
    auto palette_hit = [&](const DomainDataset& d, size_t i, int expect) {
        return pal.predict(mean_foreground_color(d.samples[i], hw)) == expect;
    };

    int strong_hits = 0, weak_hits = 0, n = 0;
    for (size_t i = 0; i < strong.samples.size(); ++i) {
        const auto& s = strong.samples[i];
        int expect = (s.class_label + s.domain_label) % 5;  // default rotation = domain id
        ++n;
        strong_hits += palette_hit(strong, i, expect);
        weak_hits += palette_hit(weak, i, expect);
    }
    CHECK(strong_hits == n);                         // rotation rule always fires
    CHECK(static_cast<double>(weak_hits) / n < 0.5); // uniform draw hits ~1/5 of the time
}

TEST_CASE("shape geometry is statistically identical across domains") {
    SynthSpec spec;
    spec.samples_per_domain_per_class = 25;
    spec.seed = 7;
    DomainDataset ds = generate(spec);
    const int hw = ds.height * ds.width;

    // foreground pixel count per domain; same geometry distribution everywhere
    std::array<std::vector<double>, 4> counts;
    for (const auto& s : ds.samples) {
        auto m = foreground_mask(s, hw);
        double c = 0;
        for (uint8_t v : m) c += v;
        counts[s.domain_label].push_back(c);
    }
    auto mean_sd = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= v.size();
        double s2 = 0;
        for (double x : v) s2 += (x - m) * (x - m);
        return std::pair<double, double>(m, s2 / (v.size() - 1));
    };
    for (int a = 0; a < 4; ++a) {
        for (int b = a + 1; b < 4; ++b) {
            auto [ma, va] = mean_sd(counts[static_cast<size_t>(a)]);
            auto [mb, vb] = mean_sd(counts[static_cast<size_t>(b)]);
            double z = (ma - mb) / std::sqrt(va / counts[static_cast<size_t>(a)].size() +
                                             vb / counts[static_cast<size_t>(b)].size());
            CAPTURE(a);
            CAPTURE(b);
            CHECK(std::fabs(z) < 2.58);
        }
    }
}
