#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace rankalign {

using TokenId = std::int32_t;
using ItemId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

struct Item {
  ItemId id = 0;
  TokenSeq tokens;
};

struct CatalogHit {
  ItemId item = 0;
  bool operator==(const CatalogHit&) const = default;
};

struct OutOfCatalog {
  TokenSeq tokens;
  bool operator==(const OutOfCatalog&) const = default;
};

using ListEntry = std::variant<CatalogHit, OutOfCatalog>;

/// A generation parsed into rank units, in generation order.
struct RankedList {
  std::vector<ListEntry> entries;
  bool terminated = false;

  std::size_t size() const { return entries.size(); }
  bool operator==(const RankedList&) const = default;
};

/// Half-open token index range [begin, end) owned by one rank (1-based).
struct RankSpan {
  int rank = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  bool operator==(const RankSpan&) const = default;
};

/// Item set with exact token-sequence lookup. Immutable after construction.
///
/// Token ids [0, vocab_size) are valid; `delim` and `eos` are reserved and may
/// not appear inside any item rendering.
class Catalog {
 public:
  Catalog(std::vector<Item> items, int vocab_size, TokenId delim, TokenId eos);

  const std::vector<Item>& items() const { return items_; }
  const Item& item(ItemId id) const;
  std::size_t size() const { return items_.size(); }
  int vocab_size() const { return vocab_size_; }
  TokenId delim() const { return delim_; }
  TokenId eos() const { return eos_; }

  /// Exact match of a token segment; -1 when the segment is not an item.
  ItemId lookup(std::span<const TokenId> tokens) const;

  std::size_t max_title_length() const { return max_title_length_; }

 private:
  struct SeqHash {
    std::size_t operator()(const TokenSeq& s) const noexcept;
  };

  std::vector<Item> items_;
  int vocab_size_;
  TokenId delim_;
  TokenId eos_;
  std::size_t max_title_length_ = 0;
  std::unordered_map<TokenSeq, ItemId, SeqHash> index_;
};

/// item_1 ⊕ delim ⊕ ... ⊕ item_n, followed by eos when `terminate`.
/// The delimiter after the last item is replaced by eos; an unterminated list
/// ends with a delimiter so the next rank can follow.
TokenSeq serialize_list(const Catalog& catalog, std::span<const ItemId> items,
                        bool terminate = true);

RankedList parse_generation(std::span<const TokenId> tokens,
                            const Catalog& catalog);

/// Partition of `tokens` into rank units. Each delimiter (and the final eos)
/// belongs to the rank that precedes it; empty segments are folded into a
/// neighbouring rank so the spans always cover every token.
std::vector<RankSpan> rank_token_spans(std::span<const TokenId> tokens,
                                       TokenId delim, TokenId eos);

/// Parse and spans in one pass; `spans.size() == list.size()` always.
struct Segmentation {
  RankedList list;
  std::vector<RankSpan> spans;
};

Segmentation segment_generation(std::span<const TokenId> tokens,
                                const Catalog& catalog);

/// JSON-lines: header {"vocab_size","delim","eos"} then one {"id","tokens"}
/// object per line.
void write_catalog(const Catalog& catalog, const std::filesystem::path& path);
Catalog read_catalog(const std::filesystem::path& path);

}  // namespace rankalign
