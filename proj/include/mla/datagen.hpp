#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mla/rng.hpp"
#include "mla/tensor.hpp"

namespace mla {

// Class identity is carried by shape geometry (causal); domain identity by
// rendering style (spurious). Styles differ in background texture, palette,
// noise and contrast, plus a per-domain rotation of the class->cue-color
// assignment that makes fill color anti-predictive out of domain.
struct DomainStyle {
    std::string name;
    int texture = 0;  // 0 flat, 1 stripes, 2 checker, 3 speckle
    std::array<int, 3> bg_a{200, 200, 210};
    std::array<int, 3> bg_b{170, 175, 185};
    double noise = 6.0;     // u8 units, uniform amplitude
    double contrast = 1.0;  // gain around mid-gray
    int cue_rotation = 0;   // class k renders with cue color (k + rotation) mod n
};

struct SynthSpec {
    int n_classes = 5;  // square, circle, triangle, cross, stripe
    std::vector<DomainStyle> domains;
    int samples_per_domain_per_class = 25;
    int image_size = 32;
    uint64_t seed = 0;
    double spurious_strength = 0.8;  // probability the domain cue color co-occurs with the class
};

// The four stock styles; n beyond 4 cycles textures with shifted palettes.
std::vector<DomainStyle> default_styles(int n);

struct DomainSample {
    std::vector<uint8_t> image;  // channel-major (3,H,W)
    uint16_t class_label = 0;
    uint16_t domain_label = 0;
};

struct DomainDataset {
    int height = 0;
    int width = 0;
    uint16_t n_classes = 0;
    uint16_t n_domains = 0;
    std::vector<std::string> domain_names;  // in-memory only; MLDG1 does not persist names
    std::vector<DomainSample> samples;

    int domain_index(const std::string& name) const;  // InputError when unknown
};

// Deterministic function of the spec. Geometry draws come from a stream
// independent of style, so per-class shape distributions match across
// domains.
DomainDataset generate(const SynthSpec& spec);

// test = every sample of the target domain; train = everything else.
std::pair<DomainDataset, DomainDataset> split_leave_one_out(const DomainDataset& ds,
                                                            const std::string& target_domain);

// MLDG1: magic "MLDG1", u32 n_samples, u16 n_classes, u16 n_domains, u32 H,
// u32 W, then per sample u16 class, u16 domain, u8 image (channel-major).
// Little-endian throughout.
void save_dataset(const DomainDataset& ds, const std::string& path);
DomainDataset load_dataset(const std::string& path);

// Model input batch: u8 -> (v/255 - 0.5) / 0.5, shape (n, 3, H, W).
Tensor batch_tensor(const DomainDataset& ds, const std::vector<int>& indices);
std::vector<int> batch_labels(const DomainDataset& ds, const std::vector<int>& indices);

}  // namespace mla
