#include "rankalign/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace rankalign {

std::size_t Catalog::SeqHash::operator()(const TokenSeq& s) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (TokenId t : s) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t));
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h);
}

Catalog::Catalog(std::vector<Item> items, int vocab_size, TokenId delim,
                 TokenId eos)
    : items_(std::move(items)),
      vocab_size_(vocab_size),
      delim_(delim),
      eos_(eos) {
  if (delim_ == eos_) throw std::invalid_argument("delim and eos must differ");
  if (delim_ < 0 || delim_ >= vocab_size_ || eos_ < 0 || eos_ >= vocab_size_)
    throw std::invalid_argument("reserved token outside vocabulary");
  index_.reserve(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Item& it = items_[i];
    if (it.id != static_cast<ItemId>(i))
      throw std::invalid_argument("item ids must be 0..n-1 in order");
    if (it.tokens.empty()) throw std::invalid_argument("empty item rendering");
    for (TokenId t : it.tokens) {
      if (t < 0 || t >= vocab_size_)
        throw std::invalid_argument("item token outside vocabulary");
      if (t == delim_ || t == eos_)
        throw std::invalid_argument("item rendering contains a reserved token");
    }
    if (!index_.emplace(it.tokens, it.id).second)
      throw std::invalid_argument("duplicate item rendering for id " +
                                  std::to_string(it.id));
    max_title_length_ = std::max(max_title_length_, it.tokens.size());
  }
}

const Item& Catalog::item(ItemId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= items_.size())
    throw std::out_of_range("item id " + std::to_string(id));
  return items_[static_cast<std::size_t>(id)];
}

ItemId Catalog::lookup(std::span<const TokenId> tokens) const {
  auto it = index_.find(TokenSeq(tokens.begin(), tokens.end()));
  return it == index_.end() ? -1 : it->second;
}

TokenSeq serialize_list(const Catalog& catalog, std::span<const ItemId> items,
                        bool terminate) {
  if (items.empty()) throw std::invalid_argument("serialize_list: empty list");
  TokenSeq out;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const Item& it = catalog.item(items[k]);
    out.insert(out.end(), it.tokens.begin(), it.tokens.end());
    const bool last = k + 1 == items.size();
    out.push_back(last && terminate ? catalog.eos() : catalog.delim());
  }
  return out;
}

namespace {

struct RawUnit {
  std::size_t begin;
  std::size_t content_end;  // content is [begin, content_end)
  std::size_t end;
};

struct RawSplit {
  std::vector<RawUnit> units;
  bool terminated = false;
};

RawSplit split_units(std::span<const TokenId> tokens, TokenId delim,
                     TokenId eos) {
  RawSplit out;
  std::size_t begin = 0;
  std::size_t i = 0;
  for (; i < tokens.size(); ++i) {
    const TokenId t = tokens[i];
    if (t == delim || t == eos) {
      out.units.push_back({begin, i, i + 1});
      begin = i + 1;
      if (t == eos) {
        out.terminated = true;
        break;
      }
    }
  }
  if (out.terminated) {
    // Anything after eos rides along with the final unit.
    out.units.back().end = tokens.size();
  } else if (begin < tokens.size()) {
    out.units.push_back({begin, tokens.size(), tokens.size()});
  }

  // Fold empty units: into the previous unit when one exists, otherwise into
  // the next non-empty unit.
  std::vector<RawUnit> kept;
  std::size_t pending_begin = 0;
  bool have_pending = false;
  for (const RawUnit& u : out.units) {
    if (u.content_end == u.begin) {
      if (!kept.empty()) {
        kept.back().end = u.end;
      } else if (!have_pending) {
        pending_begin = u.begin;
        have_pending = true;
      }
      continue;
    }
    RawUnit v = u;
    if (have_pending) {
      v.begin = pending_begin;
      have_pending = false;
    }
    kept.push_back(v);
  }
  if (kept.empty() && !tokens.empty()) {
    // Only structural tokens: one empty out-of-catalog unit owns them all.
    kept.push_back({0, 0, tokens.size()});
  }
  out.units = std::move(kept);
  return out;
}

// Content of a unit excluding folded-in leading structural tokens.
std::span<const TokenId> unit_content(std::span<const TokenId> tokens,
                                      const RawUnit& u, TokenId delim,
                                      TokenId eos) {
  std::size_t b = u.begin;
  while (b < u.content_end && (tokens[b] == delim || tokens[b] == eos)) ++b;
  return tokens.subspan(b, u.content_end - b);
}

}  // namespace

Segmentation segment_generation(std::span<const TokenId> tokens,
                                const Catalog& catalog) {
  const RawSplit raw = split_units(tokens, catalog.delim(), catalog.eos());
  Segmentation seg;
  seg.list.terminated = raw.terminated;
  seg.list.entries.reserve(raw.units.size());
  seg.spans.reserve(raw.units.size());
  int rank = 1;
  for (const RawUnit& u : raw.units) {
    auto content = unit_content(tokens, u, catalog.delim(), catalog.eos());
    const ItemId id = content.empty() ? -1 : catalog.lookup(content);
    if (id >= 0) {
      seg.list.entries.emplace_back(CatalogHit{id});
    } else {
      seg.list.entries.emplace_back(
          OutOfCatalog{TokenSeq(content.begin(), content.end())});
    }
    seg.spans.push_back({rank++, u.begin, u.end});
  }
  return seg;
}

RankedList parse_generation(std::span<const TokenId> tokens,
                            const Catalog& catalog) {
  return segment_generation(tokens, catalog).list;
}

std::vector<RankSpan> rank_token_spans(std::span<const TokenId> tokens,
                                       TokenId delim, TokenId eos) {
  const RawSplit raw = split_units(tokens, delim, eos);
  std::vector<RankSpan> spans;
  spans.reserve(raw.units.size());
  int rank = 1;
  for (const RawUnit& u : raw.units) spans.push_back({rank++, u.begin, u.end});
  return spans;
}

void write_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json header = {{"vocab_size", catalog.vocab_size()},
                           {"delim", catalog.delim()},
                           {"eos", catalog.eos()}};
  out << header.dump() << '\n';
  for (const Item& it : catalog.items()) {
    out << nlohmann::json{{"id", it.id}, {"tokens", it.tokens}}.dump() << '\n';
  }
}

Catalog read_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("catalog file is empty: " + path.string());
  const auto header = nlohmann::json::parse(line);
  std::vector<Item> items;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    items.push_back({j.at("id").get<ItemId>(), j.at("tokens").get<TokenSeq>()});
  }
  return Catalog(std::move(items), header.at("vocab_size").get<int>(),
                 header.at("delim").get<TokenId>(),
                 header.at("eos").get<TokenId>());
}

}  // namespace rankalign
