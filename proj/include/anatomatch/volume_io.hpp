#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anatomatch/volume.hpp"

namespace anatomatch {

// On-disk layout shared by all three formats:
//   4 magic bytes | u32 LE header length | UTF-8 JSON header | LE payload
//
// AEV1: {"channels","dims","normalized","spacing_mm"}, float32 payload,
//       order z, y, x, channel.
// ALV1: {"dims","num_classes","spacing_mm"}, u16 payload.
// APH1: {"head","in","out"}, float32 payload, row-major out x in.

void write_volume(const EmbeddingVolume& vol, const std::filesystem::path& path);
EmbeddingVolume read_embedding_volume(const std::filesystem::path& path);

void write_volume(const LabelVolume& vol, const std::filesystem::path& path);
LabelVolume read_label_volume(const std::filesystem::path& path);

// In-memory variants; the file functions are thin wrappers over these.
std::vector<unsigned char> encode_volume(const EmbeddingVolume& vol);
EmbeddingVolume decode_embedding_volume(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_volume(const LabelVolume& vol);
LabelVolume decode_label_volume(const std::vector<unsigned char>& bytes);

struct HeadWeights {
  std::string head;  // "appearance" | "semantic"
  int in = 0;        // feature channels F
  int out = 0;       // embedding channels C
  std::vector<float> weights;  // out x in, row-major

  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

std::vector<unsigned char> encode_head(const HeadWeights& h);
HeadWeights decode_head(const std::vector<unsigned char>& bytes);
void write_head(const HeadWeights& h, const std::filesystem::path& path);
HeadWeights read_head(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace anatomatch
