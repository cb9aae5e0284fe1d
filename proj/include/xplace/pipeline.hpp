#pragma once

#include "xplace/dataset.hpp"
#include "xplace/model.hpp"
#include "xplace/retrieval.hpp"

#include <cstdint>
#include <vector>

namespace xplace {

/// Both modalities of one location encoded into descriptor groups, rows in
/// ground-truth view order.
struct EncodedLocation {
  std::string id;
  double x_m = 0.0;
  double y_m = 0.0;
  ViewGroup text;
  ViewGroup image;
};

struct EncodeOptions {
  std::size_t views = 0;  // 0 = all populated views
  double truncate = 1.0;  // fraction of each description kept
};

RowVector encode_view_text(const TextTokenSequence& seq, const ModelParams& params);
RowVector encode_view_image(const ImageTokenSet& tokens, const ModelParams& params);

std::vector<EncodedLocation> encode_locations(const std::vector<LocationEntry>& entries, const ModelParams& params,
                                              const EncodeOptions& options = {});

struct EvalSettings {
  EvalOptions options;
  // Query text groups are presented in a per-query shuffled order drawn
  // from this seed; the database keeps ground-truth order.
  std::uint64_t shuffle_seed = 2024;
  bool shuffle = true;
};

/// Text-group queries (shuffled) with ground-truth order attached.
std::vector<GroupQuery> make_queries(const std::vector<EncodedLocation>& locations, const EvalSettings& settings);
Index make_image_index(const std::vector<EncodedLocation>& locations);

/// Text-to-image localization recall, querying every location against the
/// image groups of the same set.
RecallTable evaluate(const std::vector<EncodedLocation>& locations, const EvalSettings& settings);

}  // namespace xplace
