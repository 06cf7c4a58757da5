#pragma once

// Shared test inputs that are not oracles.

#include <cmath>
#include <cstdint>
#include <string>

#include "dpn/model.hpp"
#include "dpn/rng.hpp"

namespace fixture {

/// Random VGG-19 conv tensors keyed by the published layer names.
inline dpn::ParamStore<float> vgg_stand_in(std::uint64_t seed, const std::string& drop = "") {
    dpn::ParamStore<float> ps;
    dpn::Rng rng(seed);
    for (const auto& s : dpn::vgg19_steps()) {
        if (s.kind != dpn::EncoderStep::Kind::conv) continue;
        const auto& l = s.conv;
        const double limit = std::sqrt(6.0 / static_cast<double>(l.in_channels * 9));
        dpn::Tensor<float> k(dpn::Shape{l.out_channels, l.in_channels, 3, 3});
        for (auto& v : k.data()) v = static_cast<float>(dpn::uniform(rng, -limit, limit));
        dpn::Tensor<float> b(dpn::Shape{l.out_channels});
        for (auto& v : b.data()) v = static_cast<float>(dpn::uniform(rng, -0.1, 0.1));
        if (l.name + "/kernel" != drop) ps.put(l.name + "/kernel", std::move(k), true);
        if (l.name + "/bias" != drop) ps.put(l.name + "/bias", std::move(b), true);
    }
    return ps;
}

inline dpn::ModelConfig vgg_config() {
    dpn::ModelConfig cfg;
    cfg.encoder.variant = dpn::EncoderVariant::pretrained_frozen;
    cfg.encoder.channels = dpn::vgg19_tap_channels;
    return cfg;
}

} // namespace fixture
