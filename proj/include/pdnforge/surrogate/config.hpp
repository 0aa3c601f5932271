#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdnforge/error.hpp"

namespace pdnforge::nn {

struct ModelConfig {
  int grid = 16;
  int placement_channels = 3;
  int stackup_size = 17;
  int embed_width = 256;  // reshaped to grid x grid, so must equal grid^2
  int kernel = 3;
  int padding = 1;
  int stride = 1;
  std::vector<int> channel_widths = {32, 32, 32, 32, 32, 32, 32, 64, 64, 64, 64, 64, 64, 64};
  std::vector<int> fc_widths = {1024, 256, 132};
  double leaky_slope = 0.01;
  double dropout_rate = 0.5;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  int pixels() const { return grid * grid; }
  int conv_layers() const { return static_cast<int>(channel_widths.size()); }
  int input_channels() const { return placement_channels + 1; }
  int outputs() const { return fc_widths.empty() ? 0 : fc_widths.back(); }
  int flat_width() const { return channel_widths.back() * pixels(); }

  /// Two conv layers of 8 channels and a 4-output head; for gradient checks.
  static ModelConfig reduced() {
    ModelConfig c;
    c.channel_widths = {8, 8};
    c.fc_widths = {16, 8, 4};
    return c;
  }

  void validate() const {
    auto bad = [](const std::string& m) { return ContractError("ModelConfig: " + m); };
    if (grid < 1 || placement_channels < 1 || stackup_size < 1) throw bad("sizes must be positive");
    if (embed_width != grid * grid) throw bad("embedding width must equal grid*grid");
    if (kernel < 1 || kernel % 2 == 0) throw bad("kernel must be odd");
    if (stride != 1 || 2 * padding != kernel - 1) throw bad("conv must preserve the spatial size");
    if (channel_widths.empty()) throw bad("at least one conv layer");
    for (int w : channel_widths)
      if (w < 1) throw bad("channel widths must be positive");
    if (fc_widths.size() < 2) throw bad("dropout needs at least two FC layers");
    for (int w : fc_widths)
      if (w < 1) throw bad("FC widths must be positive");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw bad("leaky slope must be in [0, 1)");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw bad("dropout rate must be in [0, 1)");
    if (!(bn_epsilon > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw bad("bad BN constants");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"grid", c.grid},
       {"placement_channels", c.placement_channels},
       {"stackup_size", c.stackup_size},
       {"embed_width", c.embed_width},
       {"kernel", c.kernel},
       {"padding", c.padding},
       {"stride", c.stride},
       {"channel_widths", c.channel_widths},
       {"fc_widths", c.fc_widths},
       {"leaky_slope", c.leaky_slope},
       {"dropout_rate", c.dropout_rate},
       {"bn_epsilon", c.bn_epsilon},
       {"bn_momentum", c.bn_momentum}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("grid").get_to(c.grid);
  j.at("placement_channels").get_to(c.placement_channels);
  j.at("stackup_size").get_to(c.stackup_size);
  j.at("embed_width").get_to(c.embed_width);
  j.at("kernel").get_to(c.kernel);
  j.at("padding").get_to(c.padding);
  j.at("stride").get_to(c.stride);
  j.at("channel_widths").get_to(c.channel_widths);
  j.at("fc_widths").get_to(c.fc_widths);
  j.at("leaky_slope").get_to(c.leaky_slope);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("bn_epsilon").get_to(c.bn_epsilon);
  j.at("bn_momentum").get_to(c.bn_momentum);
}

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 20;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1 || epochs < 1) throw ContractError("TrainConfig: batch size and epochs must be >= 1");
    if (!(learning_rate > 0.0) || !(adam_epsilon > 0.0)) throw ContractError("TrainConfig: rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ContractError("TrainConfig: Adam betas must be in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
       {"beta2", c.beta2},           {"adam_epsilon", c.adam_epsilon},   {"epochs", c.epochs},
       {"seed", c.seed},             {"optimizer", "adam"},              {"loss", "rmse"}};
}

}  // namespace pdnforge::nn
