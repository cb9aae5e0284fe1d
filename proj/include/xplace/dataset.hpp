#pragma once

#include "xplace/image_aggregator.hpp"
#include "xplace/text_head.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xplace {

struct ViewData {
  ImageTokenSet image;
  TextTokenSequence text;
  friend bool operator==(const ViewData&, const ViewData&) = default;
};

/// One place: planar position in meters and up to four views in ground
/// truth order (slot index = view index).
struct LocationEntry {
  std::string id;
  double x_m = 0.0;
  double y_m = 0.0;
  std::vector<ViewData> views;
  friend bool operator==(const LocationEntry&, const LocationEntry&) = default;
};

enum class Split : std::uint8_t { kTrain, kVal, kTest, kUnassigned };
std::string_view to_string(Split s);

/// Synthetic corpus parameters. Location latents are i.i.d.; each view
/// mixes the latent with a view-specific rotation of it and adds a view
/// offset shared across locations. Image tokens read the view latent
/// through fixed random maps, text tokens through one map per sentence
/// slot; both add per-token noise.
struct GenConfig {
  int grid_rows = 14;
  int grid_cols = 23;
  double spacing_m = 6.0;
  int latent_dim = 16;
  int views = 4;
  int image_tokens = 16;
  int image_dim = 64;
  int text_tokens = 32;
  int text_dim = 32;
  int sentence_len = 8;
  // Distinct image read-out maps; token k uses map k % image_maps.
  int image_maps = 1;
  // 0: every sentence reads the whole latent; 1: sentence s reads only its
  // own block of latent dims.
  double sentence_focus = 1.0;
  // The last `image_distractors` tokens of each view carry a location-free
  // nuisance of scale `distractor_scale` instead of the latent.
  int image_distractors = 4;
  double distractor_scale = 2.0;
  double image_noise = 0.3;
  double text_noise = 0.3;
  // 1 = text and image share the view latent exactly; lower mixes an
  // independent latent into the text side.
  double correlation = 1.0;
  double view_offset = 2.0;
  // Weight of the unrotated latent shared by all views of a location.
  double view_sharing = 0.6;
  bool global_token = true;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Dataset {
  std::vector<LocationEntry> entries;
  std::vector<Split> splits;  // parallel to entries; kUnassigned until split()
  std::string provenance;     // free-form JSON text from the producer header

  std::vector<const LocationEntry*> subset(Split s) const;
  /// Copies of the entries in one split, in dataset order.
  std::vector<LocationEntry> entries_in(Split s) const;
};

Dataset generate(const GenConfig& config);

/// JSONL interchange: an optional {"header": {...}} record, then one record
/// per (location, view, modality). Tokens are written at float precision.
void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);
void save_jsonl(const Dataset& dataset, std::ostream& os);
Dataset load_jsonl(const std::filesystem::path& path);
Dataset load_jsonl(std::istream& is);

/// Deterministic shuffled partition by location. `ratios` are train, val,
/// test and must be positive and sum to 1.
Dataset split(Dataset dataset, std::array<double, 3> ratios, std::uint64_t seed);

/// Keeps the first ceil(fraction * tokens) tokens; a cut sentence keeps its
/// prefix.
TextTokenSequence truncate_text(const TextTokenSequence& seq, double fraction);

/// The first n views, both modalities.
LocationEntry subset_views(const LocationEntry& entry, std::size_t n);

/// Applies truncate_text to every description.
Dataset truncate_dataset(Dataset dataset, double fraction);

/// Rounds a value through 32-bit float, the file precision.
double to_file_precision(double x);

}  // namespace xplace
