#pragma once

#include "cbmi/corpus.hpp"
#include "cbmi/model.hpp"
#include "cbmi/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cbmi {

/// On-disk layout of a checkpoint directory:
///   manifest.txt   key=value lines (format, precision, step, model sizes, hashes)
///   config.txt     effective run configuration, key=value
///   tensors.idx    name<TAB>rows,cols<TAB>byte offset, one line per tensor
///   tensors.bin    little-endian payload in the declared precision
///   vocab.src.txt, vocab.tgt.txt
/// Optimizer moments are stored as ordinary named tensors ("adam.nmt.m.<i>").
inline constexpr const char* kCheckpointFormat = "cbmi-ckpt-1";

using KeyValues = std::vector<std::pair<std::string, std::string>>;

template <typename Scalar>
struct Checkpoint {
  ModelParams<Scalar> params;
  Vocabularies vocabs;
  std::int64_t step = 0;
  std::optional<OptimizerState<Scalar>> nmt_optimizer;
  std::optional<OptimizerState<Scalar>> lm_optimizer;
  KeyValues config;
  std::map<std::string, std::string> manifest;
};

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, ModelParams<Scalar>& params, const Vocabularies& vocabs,
                     std::int64_t step, const KeyValues& config, const OptimizerState<Scalar>* nmt_optimizer = nullptr,
                     const OptimizerState<Scalar>* lm_optimizer = nullptr);

/// Loads a checkpoint written in either precision and converts it to Scalar.
/// Throws std::runtime_error naming the file on any structural problem.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& dir);

std::map<std::string, std::string> read_manifest(const std::filesystem::path& dir);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

/// Hash over the manifest and tensor payload; identifies a checkpoint in reports.
std::string checkpoint_hash(const std::filesystem::path& dir);

/// Throws unless the checkpoint vocabularies equal the given ones.
void require_same_vocab(const std::filesystem::path& dir, const Vocabularies& vocabs);

/// Removes all but the newest `keep` step_* directories under `root`.
void prune_checkpoints(const std::filesystem::path& root, std::int64_t keep);

}  // namespace cbmi
