#pragma once

#include "xplace/ccca.hpp"

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace xplace {

/// Rows concatenated in slot order, then L2-normalized as a whole.
RowVector concat_group(const ViewGroup& group);

struct IndexEntry {
  std::string id;
  double x_m = 0.0;
  double y_m = 0.0;
  ViewGroup group;
  RowVector descriptor;
};

/// Brute-force flat index over concatenated group descriptors.
class Index {
 public:
  struct Input {
    std::string id;
    double x_m = 0.0;
    double y_m = 0.0;
    ViewGroup group;
  };

  static Index build(std::vector<Input> entries);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const IndexEntry& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<IndexEntry>& entries() const { return entries_; }

 private:
  std::vector<IndexEntry> entries_;
};

struct Hit {
  std::size_t index = 0;
  std::string id;
  double score = 0.0;
};

/// Exact top-k by cosine, descending; ties go to the smaller id.
std::vector<Hit> query_topk(const Index& index, const RowVector& query, std::size_t k);

enum class AlignMode { kCcca, kOracle, kNone };
std::string_view to_string(AlignMode m);
AlignMode align_mode_from_string(std::string_view s);

/// One text-group query. `observed_to_true[r]` is the true view slot of
/// observed row r; it is only read in oracle mode.
struct GroupQuery {
  double x_m = 0.0;
  double y_m = 0.0;
  ViewGroup group;
  std::vector<int> observed_to_true;
};

struct EvalOptions {
  std::vector<std::size_t> ks{1, 5, 10};
  std::vector<double> eps_m{5.0, 10.0, 15.0};
  AlignMode align_mode = AlignMode::kCcca;
  CccaOptions ccca;
  // Align against every database candidate instead of the unaligned top-1.
  bool per_candidate = false;
};

/// Recall fractions on the k x eps grid.
struct RecallTable {
  std::vector<std::size_t> ks;
  std::vector<double> eps_m;
  Matrix recall;  // ks.size() x eps_m.size()
  std::size_t queries = 0;

  double at(std::size_t k, double eps) const;
  bool monotone() const;
};

/// Reorders `query.group` into database slot order according to the mode
/// (CCCA against `reference`, ground truth, or untouched).
ViewGroup reorder_query(const GroupQuery& query, AlignMode mode, const ViewGroup* reference,
                        const CccaOptions& ccca);

/// Recall at (k, eps): a query counts when any of its top-k hits lies
/// within eps meters (inclusive) of the query position.
RecallTable recall_table(const std::vector<GroupQuery>& queries, const Index& index, const EvalOptions& options);

/// Tab-separated layout: comment header lines, then one row per k.
void write_recall_tsv(std::ostream& os, const RecallTable& table, std::string_view config_hash);
RecallTable read_recall_tsv(std::istream& is, std::string* config_hash = nullptr);

/// "r@1: 0.56/0.59/0.65" style line per k.
std::string format_recall_cells(const RecallTable& table);
/// "0.56/0.59/0.65" for one k row.
std::string format_recall_row(const RecallTable& table, std::size_t k_row);

}  // namespace xplace
