#pragma once

#include <vector>

#include "fps/common.hpp"

namespace fps::hfsnet {

struct FasConfig {
  std::size_t branches = 2;
  std::vector<std::size_t> kernel_sizes{3, 5};
  std::size_t groups = 4;
  std::size_t fuse_reduction = 2;  // fuse width = max(4, branch channels / reduction)

  void validate() const {
    require(branches >= 1, ErrorKind::invalid_input, "fas: branches must be >= 1");
    require(kernel_sizes.size() == branches, ErrorKind::invalid_input, "fas: need one kernel size per branch");
    for (auto k : kernel_sizes) require(k >= 1 && k % 2 == 1, ErrorKind::invalid_input, "fas: kernel sizes must be odd");
    require(groups >= 1 && fuse_reduction >= 1, ErrorKind::invalid_input, "fas: groups and reduction must be >= 1");
  }
};

struct NetworkConfig {
  std::size_t scales = 3;
  std::size_t in_channels = 2;
  std::size_t base_channels = 32;
  std::size_t out_channels = 2;
  std::size_t embed_dim = 16;  // attention width at scale 1, doubled per stage
  std::size_t patch_size = 1;  // attention grid is the input grid / patch_size
  std::size_t window_size = 4;
  std::size_t attn_heads = 2;
  std::size_t mlp_ratio = 2;
  FasConfig fas;

  std::size_t cnn_channels(std::size_t s) const { return base_channels << s; }
  std::size_t attn_channels(std::size_t s) const { return embed_dim << s; }
  std::size_t merged_channels(std::size_t s) const { return in_channels + cnn_channels(s); }

  void validate() const {
    require(scales >= 1, ErrorKind::invalid_input, "network: scales must be >= 1");
    require(in_channels >= 1 && out_channels >= 1, ErrorKind::invalid_input, "network: channel counts must be >= 1");
    require(window_size >= 1 && attn_heads >= 1 && mlp_ratio >= 1 && patch_size >= 1, ErrorKind::invalid_input,
            "network: window size, heads, mlp ratio and patch size must be >= 1");
    require(embed_dim % attn_heads == 0, ErrorKind::invalid_input, "network: embed_dim must be divisible by attn_heads");
    fas.validate();
    for (std::size_t s = 0; s < scales; ++s) {
      require(cnn_channels(s) % (fas.branches * fas.groups) == 0 && cnn_channels(s) % 2 == 0, ErrorKind::invalid_input,
              "network: CNN channels must be even and divisible by fas branches * groups");
      require(merged_channels(s) % 2 == 0, ErrorKind::invalid_input, "network: in_channels + CNN channels must be even");
    }
  }

  /// Input grids must halve cleanly S-1 times, stay even for the quadrant
  /// split, and tile into attention windows at every stage.
  void validate_input(std::size_t h, std::size_t w) const {
    for (std::size_t s = 0; s < scales; ++s) {
      const std::size_t hs = h >> s, ws = w >> s;
      require((hs << s) == h && (ws << s) == w, ErrorKind::shape,
              "network: input size must be divisible by 2^(scales-1)");
      require(hs % 2 == 0 && ws % 2 == 0, ErrorKind::shape, "network: every scale needs even height and width");
      require(hs % patch_size == 0 && ws % patch_size == 0, ErrorKind::shape,
              "network: input size must be divisible by patch_size * 2^(scales-1)");
      const std::size_t ah = hs / patch_size, aw = ws / patch_size;
      require(ah % std::min(window_size, ah) == 0 && aw % std::min(window_size, aw) == 0, ErrorKind::shape,
              "network: scale " + std::to_string(s + 1) + " grid not divisible by the attention window");
    }
  }
};

}  // namespace fps::hfsnet
