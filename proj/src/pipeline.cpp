#include "xplace/pipeline.hpp"

#include "xplace/rng.hpp"

#include <numeric>

namespace xplace {

RowVector encode_view_text(const TextTokenSequence& seq, const ModelParams& params) {
  return encode_text(seq, params.text);
}

RowVector encode_view_image(const ImageTokenSet& tokens, const ModelParams& params) {
  return encode_image(tokens, params.image);
}

std::vector<EncodedLocation> encode_locations(const std::vector<LocationEntry>& entries, const ModelParams& params,
                                              const EncodeOptions& options) {
  const Eigen::Index d = params.descriptor_dim();
  std::vector<EncodedLocation> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const std::size_t v = options.views == 0 ? e.views.size() : options.views;
    if (v < 1 || v > e.views.size()) throw DomainError("encode_locations: location " + e.id + " has too few views");
    EncodedLocation enc{e.id, e.x_m, e.y_m, Matrix(static_cast<Eigen::Index>(v), d), Matrix(static_cast<Eigen::Index>(v), d)};
    for (std::size_t i = 0; i < v; ++i) {
      const auto& view = e.views[i];
      const TextTokenSequence text = options.truncate < 1.0 ? truncate_text(view.text, options.truncate) : view.text;
      enc.text.row(static_cast<Eigen::Index>(i)) = encode_view_text(text, params);
      enc.image.row(static_cast<Eigen::Index>(i)) = encode_view_image(view.image, params);
    }
    out.push_back(std::move(enc));
  }
  return out;
}

std::vector<GroupQuery> make_queries(const std::vector<EncodedLocation>& locations, const EvalSettings& settings) {
  const Rng root(settings.shuffle_seed);
  std::vector<GroupQuery> queries;
  queries.reserve(locations.size());
  for (std::size_t i = 0; i < locations.size(); ++i) {
    const auto& loc = locations[i];
    const auto v = static_cast<std::size_t>(loc.text.rows());
    // observed row r shows true view order[r]
    std::vector<int> order(v);
    std::iota(order.begin(), order.end(), 0);
    if (settings.shuffle) {
      Rng rng = root.substream(i);
      rng.shuffle(order);
    }
    GroupQuery q;
    q.x_m = loc.x_m;
    q.y_m = loc.y_m;
    q.group.resize(loc.text.rows(), loc.text.cols());
    for (std::size_t r = 0; r < v; ++r) q.group.row(static_cast<Eigen::Index>(r)) = loc.text.row(order[r]);
    q.observed_to_true = std::move(order);
    queries.push_back(std::move(q));
  }
  return queries;
}

Index make_image_index(const std::vector<EncodedLocation>& locations) {
  std::vector<Index::Input> inputs;
  inputs.reserve(locations.size());
  for (const auto& loc : locations) inputs.push_back({loc.id, loc.x_m, loc.y_m, loc.image});
  return Index::build(std::move(inputs));
}

RecallTable evaluate(const std::vector<EncodedLocation>& locations, const EvalSettings& settings) {
  return recall_table(make_queries(locations, settings), make_image_index(locations), settings.options);
}

}  // namespace xplace
