#include "xplace/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace xplace {

RowVector concat_group(const ViewGroup& group) {
  if (group.rows() < 1) throw DomainError("concat_group: empty group");
  RowVector flat(group.size());
  for (Eigen::Index r = 0; r < group.rows(); ++r) flat.segment(r * group.cols(), group.cols()) = group.row(r);
  return l2_normalized(flat);
}

Index Index::build(std::vector<Input> entries) {
  Index index;
  std::set<std::string> seen;
  index.entries_.reserve(entries.size());
  for (auto& e : entries) {
    if (!seen.insert(e.id).second) throw ConfigError("duplicate location id in index: " + e.id);
    RowVector d = concat_group(e.group);
    index.entries_.push_back(IndexEntry{std::move(e.id), e.x_m, e.y_m, std::move(e.group), std::move(d)});
  }
  return index;
}

namespace {

std::vector<Hit> rank(const Index& index, const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> order(index.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t take = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index[a].id < index[b].id;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
  std::vector<Hit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) hits.push_back(Hit{order[i], index[order[i]].id, scores[order[i]]});
  return hits;
}

std::vector<double> cosine_scores(const Index& index, const RowVector& query) {
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const RowVector& d = index[i].descriptor;
    if (d.size() != query.size()) throw ConfigError("query descriptor dim does not match the index");
    scores[i] = cosine(Vector(d.transpose()), Vector(query.transpose()));
  }
  return scores;
}

}  // namespace

std::vector<Hit> query_topk(const Index& index, const RowVector& query, std::size_t k) {
  if (k < 1) throw DomainError("query_topk: k must be >= 1");
  if (index.empty()) return {};
  return rank(index, cosine_scores(index, query), k);
}

std::string_view to_string(AlignMode m) {
  switch (m) {
    case AlignMode::kCcca: return "ccca";
    case AlignMode::kOracle: return "oracle";
    case AlignMode::kNone: return "none";
  }
  return "?";
}

AlignMode align_mode_from_string(std::string_view s) {
  if (s == "ccca") return AlignMode::kCcca;
  if (s == "oracle") return AlignMode::kOracle;
  if (s == "none") return AlignMode::kNone;
  throw ConfigError("unknown align mode: " + std::string(s));
}

double RecallTable::at(std::size_t k, double eps) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    for (std::size_t j = 0; j < eps_m.size(); ++j)
      if (ks[i] == k && eps_m[j] == eps) return recall(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  throw ConfigError("recall table has no cell for k=" + std::to_string(k) + ", eps=" + std::to_string(eps));
}

bool RecallTable::monotone() const {
  // Grid axes are stored sorted ascending by recall_table.
  for (Eigen::Index i = 0; i < recall.rows(); ++i)
    for (Eigen::Index j = 0; j < recall.cols(); ++j) {
      if (i > 0 && recall(i, j) < recall(i - 1, j)) return false;
      if (j > 0 && recall(i, j) < recall(i, j - 1)) return false;
    }
  return true;
}

ViewGroup reorder_query(const GroupQuery& query, AlignMode mode, const ViewGroup* reference,
                        const CccaOptions& ccca) {
  const ViewGroup& g = query.group;
  switch (mode) {
    case AlignMode::kNone:
      return g;
    case AlignMode::kOracle: {
      if (query.observed_to_true.size() != static_cast<std::size_t>(g.rows()))
        throw ConfigError("oracle alignment needs the ground-truth view order");
      ViewGroup out(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) out.row(query.observed_to_true[static_cast<std::size_t>(r)]) = g.row(r);
      return out;
    }
    case AlignMode::kCcca: {
      if (reference == nullptr) throw ConfigError("ccca alignment needs a reference group");
      const Alignment al = align(g, *reference, ccca);
      ViewGroup out(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) out.row(al.permutation[static_cast<std::size_t>(r)]) = g.row(r);
      return out;
    }
  }
  return g;
}

RecallTable recall_table(const std::vector<GroupQuery>& queries, const Index& index, const EvalOptions& options) {
  if (queries.empty()) throw DomainError("recall_table: no queries");
  if (index.empty()) throw DomainError("recall_table: empty index");
  if (options.ks.empty() || options.eps_m.empty()) throw ConfigError("recall_table: empty k or eps list");

  RecallTable table;
  table.ks = options.ks;
  table.eps_m = options.eps_m;
  std::sort(table.ks.begin(), table.ks.end());
  std::sort(table.eps_m.begin(), table.eps_m.end());
  if (table.ks.front() < 1) throw ConfigError("recall_table: k must be >= 1");
  table.recall = Matrix::Zero(static_cast<Eigen::Index>(table.ks.size()), static_cast<Eigen::Index>(table.eps_m.size()));
  table.queries = queries.size();
  const std::size_t max_k = table.ks.back();

  for (const GroupQuery& q : queries) {
    std::vector<Hit> hits;
    if (options.align_mode == AlignMode::kCcca && options.per_candidate) {
      std::vector<double> scores(index.size());
      for (std::size_t i = 0; i < index.size(); ++i) {
        const ViewGroup aligned = reorder_query(q, AlignMode::kCcca, &index[i].group, options.ccca);
        scores[i] = concat_group(aligned).dot(index[i].descriptor);
      }
      hits = rank(index, scores, max_k);
    } else {
      const ViewGroup* reference = nullptr;
      if (options.align_mode == AlignMode::kCcca) {
        const auto pre = query_topk(index, concat_group(q.group), 1);
        reference = &index[pre.front().index].group;
      }
      const ViewGroup aligned = reorder_query(q, options.align_mode, reference, options.ccca);
      hits = query_topk(index, concat_group(aligned), max_k);
    }

    for (std::size_t ki = 0; ki < table.ks.size(); ++ki) {
      for (std::size_t ei = 0; ei < table.eps_m.size(); ++ei) {
        const std::size_t take = std::min(table.ks[ki], hits.size());
        for (std::size_t h = 0; h < take; ++h) {
          const IndexEntry& e = index[hits[h].index];
          if (std::hypot(e.x_m - q.x_m, e.y_m - q.y_m) <= table.eps_m[ei]) {
            table.recall(static_cast<Eigen::Index>(ki), static_cast<Eigen::Index>(ei)) += 1.0;
            break;
          }
        }
      }
    }
  }
  table.recall /= static_cast<double>(queries.size());
  return table;
}

void write_recall_tsv(std::ostream& os, const RecallTable& table, std::string_view config_hash) {
  os << "# config_hash\t" << config_hash << "\n";
  os << "# queries\t" << table.queries << "\n";
  os << "k";
  for (double e : table.eps_m) os << "\teps" << e;
  os << "\n";
  os << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < table.ks.size(); ++i) {
    os << table.ks[i];
    for (std::size_t j = 0; j < table.eps_m.size(); ++j)
      os << "\t" << table.recall(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    os << "\n";
  }
  os.unsetf(std::ios::floatfield);
}

RecallTable read_recall_tsv(std::istream& is, std::string* config_hash) {
  RecallTable t;
  std::string line;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (line[0] == '#') {
      if (cells.size() == 2 && cells[0] == "# config_hash" && config_hash) *config_hash = cells[1];
      if (cells.size() == 2 && cells[0] == "# queries") t.queries = std::stoul(cells[1]);
      continue;
    }
    if (!have_header) {
      if (cells.empty() || cells[0] != "k") throw ConfigError("recall TSV: missing header row");
      for (std::size_t j = 1; j < cells.size(); ++j) {
        if (cells[j].rfind("eps", 0) != 0) throw ConfigError("recall TSV: bad column " + cells[j]);
        t.eps_m.push_back(std::stod(cells[j].substr(3)));
      }
      have_header = true;
      continue;
    }
    if (cells.size() != t.eps_m.size() + 1) throw ConfigError("recall TSV: ragged row");
    t.ks.push_back(std::stoul(cells[0]));
    std::vector<double> r;
    for (std::size_t j = 1; j < cells.size(); ++j) r.push_back(std::stod(cells[j]));
    rows.push_back(std::move(r));
  }
  if (!have_header) throw ConfigError("recall TSV: empty input");
  t.recall.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.eps_m.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      t.recall(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return t;
}

std::string format_recall_row(const RecallTable& table, std::size_t k_row) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  for (std::size_t j = 0; j < table.eps_m.size(); ++j) {
    if (j) os << "/";
    os << table.recall(static_cast<Eigen::Index>(k_row), static_cast<Eigen::Index>(j));
  }
  return os.str();
}

std::string format_recall_cells(const RecallTable& table) {
  std::ostringstream os;
  for (std::size_t i = 0; i < table.ks.size(); ++i) os << "r@" << table.ks[i] << ": " << format_recall_row(table, i) << "\n";
  return os.str();
}

}  // namespace xplace
