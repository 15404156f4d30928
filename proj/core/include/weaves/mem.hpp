#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "weaves/common.hpp"

namespace weaves {

enum class RangeKind : u8 { BeadData = 0, Heap = 1, Tuple = 2 };

// An accessible span of guest memory. Ranges never overlap. Bytes outside
// every range are unmapped: guest access traps even if the backing page
// still exists (pages are dropped only when no range intersects them).
struct MemRange {
    u64 start = 0;
    u64 size = 0;
    RangeKind kind = RangeKind::Heap;
    u64 owner = 0;   // bead id / heap region start / module id (tuple)
    u64 island = 0;
    u32 node = 0;

    u64 end() const { return start + size; }
    bool operator==(const MemRange&) const = default;
};

// Sparse paged guest memory with a write barrier. Every mutation of page
// contents (byte writes, page write-back, page drop) invokes the barrier
// first, which is how copy-on-write checkpointing observes first writes.
class VmMemory {
public:
    using Page = std::array<u8, kPageSize>;
    using Barrier = std::function<void(u64 page_no)>;
    using WriteObserver = std::function<void(u64 addr, u64 len)>;

    void set_barrier(Barrier b) { barrier_ = std::move(b); }
    void set_write_observer(WriteObserver o) { observer_ = std::move(o); }
    void set_unmap_observer(WriteObserver o) { unmap_observer_ = std::move(o); }

    /// Register an accessible range and zero-fill its bytes. Throws
    /// AddressCollision on overlap with an existing range.
    void map_range(const MemRange& r);
    /// Remove a range; pages no longer covered by any range are dropped
    /// (after the barrier has seen them).
    void unmap_range(u64 start);

    /// Range fully containing [addr, addr+len), or nullptr.
    const MemRange* find_range(u64 addr, u64 len) const;
    const MemRange* range_at(u64 start) const;
    const std::map<u64, MemRange>& ranges() const { return ranges_; }

    Cell read_cell(u64 addr) const;
    void write_cell(u64 addr, Cell v);
    void read_bytes(u64 addr, std::span<u8> out) const;
    void write_bytes(u64 addr, std::span<const u8> in);

    bool page_mapped(u64 page_no) const { return pages_.count(page_no) != 0; }
    const Page& page(u64 page_no) const;
    /// Overwrite (or create) a whole page through the barrier.
    void write_page(u64 page_no, const Page& bytes);
    /// Drop a page through the barrier.
    void drop_page(u64 page_no);
    std::vector<u64> mapped_pages() const;
    size_t page_count() const { return pages_.size(); }

    /// Rebuild the range table wholesale (checkpoint restore / admit path).
    void replace_ranges(std::map<u64, MemRange> ranges) { ranges_ = std::move(ranges); }
    void set_range_island(u64 start, u64 island);

    u64 digest() const;

private:
    Page& ensure_page(u64 page_no);
    void touch(u64 page_no);

    std::map<u64, std::unique_ptr<Page>> pages_;
    std::map<u64, MemRange> ranges_;  // keyed by start
    Barrier barrier_;
    WriteObserver observer_;
    WriteObserver unmap_observer_;
};

}  // namespace weaves
