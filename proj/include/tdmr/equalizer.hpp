#pragma once

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdmr/channel.hpp"
#include "tdmr/trellis.hpp"

namespace tdmr {

enum class Arch { Linear2D, MLP, RBFNN, FIRRBFNN, RCMLP1, RCMLP2, RCMLP3, RCMLP4 };
enum class Basis { Gaussian, Tanh, Linear };
enum class Activation { Tanh };

std::string_view to_string(Arch arch);
std::string_view to_string(Basis basis);
Arch parse_arch(std::string_view text);
Basis parse_basis(std::string_view text);

/// Architecture and sizes.
///
/// K is the hidden size for MLP, the number of centroids per reader for RBFNN and
/// FIRRBFNN, the total hidden delay length for RCMLP1/RCMLP4 (K/2 per path) and the
/// hidden delay length for RCMLP2/RCMLP3. Linear2D ignores K.
struct EqualizerSpec {
    Arch arch = Arch::Linear2D;
    int M = 5;
    int K = 1;
    int M_prime = 2;
    Basis basis = Basis::Gaussian;
    Activation activation = Activation::Tanh;

    void validate() const;
    bool operator==(const EqualizerSpec&) const = default;
};

/// Samples needed on each side of n to evaluate output n.
int context_halfwidth(const EqualizerSpec& spec);

/// Learnable scalars, laid out as named row-major blocks over one flat buffer.
class ParameterSet {
public:
    struct Block {
        std::string name;
        std::size_t rows = 0;
        std::size_t cols = 0;
        std::size_t offset = 0;
        std::size_t size() const { return rows * cols; }
    };

    /// Architecture fields that determine the layout.
    struct Shape {
        Arch arch = Arch::Linear2D;
        int M = 0;
        int K = 0;
        int M_prime = 0;
        bool operator==(const Shape&) const = default;
    };

    ParameterSet() = default;

    /// Zero-filled parameters with the layout implied by `spec`.
    static ParameterSet zeros(const EqualizerSpec& spec);

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    const std::vector<Block>& blocks() const { return blocks_; }
    const Shape& shape() const { return shape_; }

    std::span<double> block(std::string_view name);
    std::span<const double> block(std::string_view name) const;
    const Block& block_info(std::string_view name) const;

    bool same_layout(const ParameterSet& other) const;
    void fill(double value);
    /// this += scale * other
    void axpy(double scale, const ParameterSet& other);

    bool operator==(const ParameterSet& other) const { return same_layout(other) && values_ == other.values_; }

private:
    void add_block(std::string name, std::size_t rows, std::size_t cols);

    Shape shape_;
    std::vector<Block> blocks_;
    std::vector<double> values_;
};

/// Learnable parameter count, following the published complexity accounting.
std::size_t count_params(const EqualizerSpec& spec);

/// Throws std::invalid_argument if `params` does not have the layout of `spec`.
void check_dimensions(const EqualizerSpec& spec, const ParameterSet& params);

/// Equalizer output for one sample from windows of length 2 * context_halfwidth(spec) + 1.
double forward(const EqualizerSpec& spec, const ParameterSet& params, const AdcWindow& window);

/// Adds dJ_dy * dy/dtheta into `grad` (same layout as params).
void backward(const EqualizerSpec& spec, const ParameterSet& params, const AdcWindow& window, double dJ_dy,
              ParameterSet& grad);

/// Sector streams zero-padded by the context half-width on both sides.
class PaddedSector {
public:
    PaddedSector(const ReadbackSector& sector, int halfwidth);

    std::size_t size() const { return length_; }
    int halfwidth() const { return halfwidth_; }
    /// Window centered on sample n of the original sector.
    AdcWindow window(std::size_t n) const;
    /// Padded stream l; original sample n lives at index n + halfwidth.
    std::span<const double> stream(int l) const { return streams_[l]; }

private:
    std::size_t length_;
    int halfwidth_;
    std::vector<double> streams_[2];
};

/// Streaming evaluation of outputs [begin, end) that shares the filter stages across samples.
std::vector<double> equalize_stream(const EqualizerSpec& spec, const ParameterSet& params, const PaddedSector& padded,
                                    std::size_t begin, std::size_t end);

struct InitOptions {
    uint64_t seed = 1;
    /// FIR front-end taps from a linear solution (length 2M+1 per reader); empty for a scaled delta.
    std::vector<double> linear_taps[2];
    /// Sectors sampled for k-means centroids.
    std::span<const ReadbackSector> data;
    std::size_t kmeans_samples = 4000;
    int kmeans_iterations = 20;
};

ParameterSet initialize(const EqualizerSpec& spec, const InitOptions& options);

/// Equalizer, target and LLR scaling as stored in a model file.
struct EqualizerModel {
    EqualizerSpec spec;
    ParameterSet params;
    PRTarget target;
    double noise_var = 1.0;
};

void save_model(const std::filesystem::path& path, const EqualizerModel& model, std::string_view config_hash = {});
EqualizerModel load_model(const std::filesystem::path& path);

}  // namespace tdmr
