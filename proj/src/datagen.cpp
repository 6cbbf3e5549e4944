#include "mla/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mla/errors.hpp"

namespace mla {

namespace {

// Saturated cue palette off a hue wheel; backgrounds stay pale so the
// shape/background separation survives noise and contrast jitter.
std::array<int, 3> hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(h, 360.0);
    double c = v * s;
    double x = c * (1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (h < 60) { r = c; g = x; }
    else if (h < 120) { r = x; g = c; }
    else if (h < 180) { g = c; b = x; }
    else if (h < 240) { g = x; b = c; }
    else if (h < 300) { r = x; b = c; }
    else { r = c; b = x; }
    double m = v - c;
    auto q = [&](double t) { return static_cast<int>(std::lround((t + m) * 255.0)); };
    return {q(r), q(g), q(b)};
}

std::array<int, 3> cue_color(int idx, int n_cues) {
    return hsv_to_rgb(360.0 * idx / n_cues, 0.85, 0.80);
}

constexpr uint64_t kGeomStream = 1;
constexpr uint64_t kStyleStream = 2;
constexpr uint64_t kCueStream = 3;

uint64_t sample_tag(uint64_t stream, uint64_t domain, uint64_t cls, uint64_t idx) {
    return (stream << 56) ^ (domain << 44) ^ (cls << 32) ^ idx;
}

struct Geometry {
    double cx, cy, r;
};

// One draw layout for every class so shape-size/position distributions are
// identical across domains and classes.
Geometry draw_geometry(Rng& rng, int size) {
    Geometry g;
    g.cx = rng.uniform(0.38, 0.62) * size;
    g.cy = rng.uniform(0.38, 0.62) * size;
    g.r = rng.uniform(0.20, 0.30) * size;
    return g;
}

bool inside_shape(int cls, const Geometry& g, double x, double y) {
    double dx = x - g.cx;
    double dy = y - g.cy;
    switch (cls) {
        case 0:  // square
            return std::fabs(dx) <= g.r && std::fabs(dy) <= g.r;
        case 1:  // circle
            return dx * dx + dy * dy <= g.r * g.r;
        case 2:  // triangle, apex up
            return dy >= -g.r && dy <= g.r && std::fabs(dx) <= (dy + g.r) * 0.5;
        case 3:  // cross
            return (std::fabs(dx) <= g.r / 3.0 && std::fabs(dy) <= g.r) ||
                   (std::fabs(dy) <= g.r / 3.0 && std::fabs(dx) <= g.r);
        case 4:  // diagonal stripe
            return std::fabs(dx - dy) <= g.r * 0.5 && std::fabs(dx) <= g.r && std::fabs(dy) <= g.r;
        default:
            throw InputError("no shape defined for class " + std::to_string(cls));
    }
}

std::vector<uint8_t> render_sample(const SynthSpec& spec, const DomainStyle& style, int domain,
                                   int cls, int idx, Rng& base) {
    const int size = spec.image_size;
    const int hw = size * size;

    Rng geom_rng = base.fork(sample_tag(kGeomStream, domain, cls, idx));
    Rng style_rng = base.fork(sample_tag(kStyleStream, domain, cls, idx));
    Rng cue_rng = base.fork(sample_tag(kCueStream, domain, cls, idx));

    Geometry geom = draw_geometry(geom_rng, size);

    int cue_idx;
    if (cue_rng.uniform() < spec.spurious_strength) {
        cue_idx = (cls + style.cue_rotation) % spec.n_classes;
    } else {
        cue_idx = static_cast<int>(cue_rng.below(static_cast<uint64_t>(spec.n_classes)));
    }
    std::array<int, 3> fill = cue_color(cue_idx, spec.n_classes);

    std::vector<double> px(3 * hw);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const std::array<int, 3>* bg = &style.bg_a;
            switch (style.texture) {
                case 0: break;
                case 1: if ((y / 4) % 2 == 1) bg = &style.bg_b; break;
                case 2: if ((x / 4 + y / 4) % 2 == 1) bg = &style.bg_b; break;
                case 3: if (style_rng.uniform() < 0.5) bg = &style.bg_b; break;
                default: throw InputError("unknown texture id " + std::to_string(style.texture));
            }
            for (int c = 0; c < 3; ++c) px[c * hw + y * size + x] = (*bg)[c];
        }
    }

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (inside_shape(cls, geom, x + 0.5, y + 0.5))
                for (int c = 0; c < 3; ++c) px[c * hw + y * size + x] = fill[c];

    std::vector<uint8_t> out(3 * hw);
    for (int c = 0; c < 3; ++c) {
        for (int p = 0; p < hw; ++p) {
            double v = 128.0 + style.contrast * (px[c * hw + p] - 128.0);
            v += style_rng.uniform(-style.noise, style.noise);
            out[c * hw + p] = static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    }
    return out;
}

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(std::istream& in, const char* what) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2))
        throw FormatError(std::string("truncated dataset while reading ") + what);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(std::string("truncated dataset while reading ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

std::vector<DomainStyle> default_styles(int n) {
    if (n < 1) throw InputError("need at least one domain");
    const std::vector<DomainStyle> base = {
        {"flat", 0, {214, 214, 214}, {214, 214, 214}, 5.0, 1.00, 0},
        {"stripes", 1, {196, 204, 212}, {168, 176, 188}, 8.0, 1.05, 1},
        {"checker", 2, {206, 198, 188}, {178, 170, 160}, 11.0, 0.92, 2},
        {"speckle", 3, {188, 196, 190}, {214, 222, 214}, 16.0, 1.12, 3},
    };
    std::vector<DomainStyle> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        DomainStyle s = base[static_cast<size_t>(i) % base.size()];
        if (i >= 4) {
            int shift = (i * 13) % 40 - 20;
            for (auto* pal : {&s.bg_a, &s.bg_b})
                for (int c = 0; c < 3; ++c) (*pal)[c] = std::clamp((*pal)[c] + shift, 0, 255);
            s.name += "_" + std::to_string(i);
        }
        s.cue_rotation = i;
        out.push_back(std::move(s));
    }
    return out;
}

int DomainDataset::domain_index(const std::string& name) const {
    for (size_t i = 0; i < domain_names.size(); ++i)
        if (domain_names[i] == name) return static_cast<int>(i);
    throw InputError("unknown domain '" + name + "'");
}

DomainDataset generate(const SynthSpec& spec) {
    if (spec.image_size < 16)
        throw InputError("image size " + std::to_string(spec.image_size) +
                         " too small for shape rendering (minimum 16)");
    if (spec.n_classes < 2 || spec.n_classes > 5)
        throw InputError("n_classes must be in [2, 5], got " + std::to_string(spec.n_classes));
    if (spec.samples_per_domain_per_class < 1)
        throw InputError("samples_per_domain_per_class must be positive");
    if (spec.spurious_strength < 0.0 || spec.spurious_strength > 1.0)
        throw InputError("spurious_strength must lie in [0, 1]");

    std::vector<DomainStyle> styles = spec.domains.empty() ? default_styles(4) : spec.domains;

    DomainDataset ds;
    ds.height = spec.image_size;
    ds.width = spec.image_size;
    ds.n_classes = static_cast<uint16_t>(spec.n_classes);
    ds.n_domains = static_cast<uint16_t>(styles.size());
    for (const auto& s : styles) ds.domain_names.push_back(s.name);

    Rng base(spec.seed);
    for (size_t d = 0; d < styles.size(); ++d) {
        for (int k = 0; k < spec.n_classes; ++k) {
            for (int i = 0; i < spec.samples_per_domain_per_class; ++i) {
                DomainSample s;
                s.image = render_sample(spec, styles[d], static_cast<int>(d), k, i, base);
                s.class_label = static_cast<uint16_t>(k);
                s.domain_label = static_cast<uint16_t>(d);
                ds.samples.push_back(std::move(s));
            }
        }
    }
    return ds;
}

std::pair<DomainDataset, DomainDataset> split_leave_one_out(const DomainDataset& ds,
                                                            const std::string& target_domain) {
    int target = ds.domain_index(target_domain);
    DomainDataset train = ds;
    DomainDataset test = ds;
    train.samples.clear();
    test.samples.clear();
    // Domain label space (and names) stay intact in both halves so labels
    // keep meaning across the split.
    for (const auto& s : ds.samples) {
        if (s.domain_label == target) test.samples.push_back(s);
        else train.samples.push_back(s);
    }
    return {std::move(train), std::move(test)};
}

void save_dataset(const DomainDataset& ds, const std::string& path) {
    const size_t hw = static_cast<size_t>(ds.height) * static_cast<size_t>(ds.width);
    std::string buf;
    buf.reserve(21 + ds.samples.size() * (4 + 3 * hw));
    buf.append("MLDG1", 5);
    put_u32(buf, static_cast<uint32_t>(ds.samples.size()));
    put_u16(buf, ds.n_classes);
    put_u16(buf, ds.n_domains);
    put_u32(buf, static_cast<uint32_t>(ds.height));
    put_u32(buf, static_cast<uint32_t>(ds.width));
    for (const auto& s : ds.samples) {
        if (s.image.size() != 3 * hw)
            throw InputError("sample image size does not match dataset dims");
        put_u16(buf, s.class_label);
        put_u16(buf, s.domain_label);
        buf.append(reinterpret_cast<const char*>(s.image.data()), s.image.size());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

DomainDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, "MLDG1", 5) != 0)
        throw FormatError("'" + path + "' is not an MLDG1 dataset");

    DomainDataset ds;
    uint32_t n_samples = get_u32(in, "sample count");
    ds.n_classes = get_u16(in, "class count");
    ds.n_domains = get_u16(in, "domain count");
    ds.height = static_cast<int>(get_u32(in, "height"));
    ds.width = static_cast<int>(get_u32(in, "width"));
    if (ds.n_classes == 0 || ds.n_domains == 0)
        throw FormatError("dataset declares zero classes or domains");
    if (ds.height <= 0 || ds.width <= 0 || ds.height > 4096 || ds.width > 4096)
        throw FormatError("implausible image dims in dataset header");
    if (n_samples > (1u << 26)) throw FormatError("implausible sample count in dataset header");

    const size_t bytes = 3 * static_cast<size_t>(ds.height) * static_cast<size_t>(ds.width);
    ds.samples.reserve(n_samples);
    for (uint32_t i = 0; i < n_samples; ++i) {
        DomainSample s;
        s.class_label = get_u16(in, "class label");
        s.domain_label = get_u16(in, "domain label");
        if (s.class_label >= ds.n_classes)
            throw FormatError("class label out of range in sample " + std::to_string(i));
        if (s.domain_label >= ds.n_domains)
            throw FormatError("domain label out of range in sample " + std::to_string(i));
        s.image.resize(bytes);
        if (!in.read(reinterpret_cast<char*>(s.image.data()),
                     static_cast<std::streamsize>(bytes)))
            throw FormatError("truncated dataset while reading sample " + std::to_string(i));
        ds.samples.push_back(std::move(s));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError("trailing bytes after last sample in '" + path + "'");

    for (int d = 0; d < ds.n_domains; ++d) ds.domain_names.push_back("domain_" + std::to_string(d));
    return ds;
}

Tensor batch_tensor(const DomainDataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) throw InputError("empty batch");
    const int hw = ds.height * ds.width;
    std::vector<double> data(indices.size() * 3 * static_cast<size_t>(hw));
    size_t off = 0;
    for (int idx : indices) {
        if (idx < 0 || static_cast<size_t>(idx) >= ds.samples.size())
            throw InputError("sample index " + std::to_string(idx) + " out of range");
        const auto& img = ds.samples[static_cast<size_t>(idx)].image;
        for (size_t p = 0; p < img.size(); ++p)
            data[off + p] = (img[p] / 255.0 - 0.5) / 0.5;
        off += img.size();
    }
    return Tensor::from_data({static_cast<int>(indices.size()), 3, ds.height, ds.width},
                             std::move(data));
}

std::vector<int> batch_labels(const DomainDataset& ds, const std::vector<int>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int idx : indices) {
        if (idx < 0 || static_cast<size_t>(idx) >= ds.samples.size())
            throw InputError("sample index " + std::to_string(idx) + " out of range");
        out.push_back(ds.samples[static_cast<size_t>(idx)].class_label);
    }
    return out;
}

}  // namespace mla
