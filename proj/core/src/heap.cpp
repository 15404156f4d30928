#include <algorithm>

#include "weaves/runtime.hpp"

namespace weaves {

namespace {
u64 round_cell(u64 n) { return (n + kCellSize - 1) & ~u64(kCellSize - 1); }
}

u64 NodeAllocator::acquire(u64 size) {
    u64 want = round_cell(size);
    // First fit over the address-ordered free list.
    for (auto it = free_list.begin(); it != free_list.end(); ++it) {
        if (it->second >= want) {
            u64 off = it->first;
            u64 block = it->second;
            free_list.erase(it);
            if (block > want) free_list.emplace(off + want, block - want);
            return node_base(node) + off;
        }
    }
    if (cursor + want > kNodeSpan || cursor + want < cursor)
        fail("PartitionExhausted", "node " + std::to_string(node));
    u64 off = cursor;
    cursor += want;
    return node_base(node) + off;
}

void NodeAllocator::release(u64 addr, u64 size) {
    u64 off = addr - node_base(node);
    u64 want = round_cell(size);
    auto [it, ok] = free_list.emplace(off, want);
    if (!ok) fail("InvariantViolation", "double release at " + std::to_string(addr));
    // Coalesce with neighbours.
    if (it != free_list.begin()) {
        auto prev = std::prev(it);
        if (prev->first + prev->second == off) {
            prev->second += it->second;
            free_list.erase(it);
            it = prev;
        }
    }
    auto next = std::next(it);
    if (next != free_list.end() && it->first + it->second == next->first) {
        it->second += next->second;
        free_list.erase(next);
    }
    // A block touching the bump cursor folds back into it.
    if (it->first + it->second == cursor) {
        cursor = it->first;
        free_list.erase(it);
    }
}

void NodeAllocator::reserve_through(u64 addr_end) {
    u64 off = round_cell(addr_end - node_base(node));
    cursor = std::max(cursor, off);
}

NodeAllocator& Runtime::allocator(u32 node) {
    auto it = allocators.find(node);
    if (it == allocators.end()) {
        NodeAllocator a;
        a.node = node;
        it = allocators.emplace(node, a).first;
    }
    return it->second;
}

u64 Runtime::halloc(u32 node, u64 size, u64 bead_id, u64 string_id, u64 island_id) {
    if (size == 0) fail("ZeroSize", "allocation of 0 bytes");
    if (node >= node_count) fail("UnknownNode", std::to_string(node));
    u64 addr = allocator(node).acquire(size);
    MemRange r{addr, round_cell(size), RangeKind::Heap, addr, island_id, node};
    mem.map_range(r);
    HeapRegion region{addr, size, bead_id, string_id, island_id, node, next_epoch()};
    heap_regions.emplace(addr, region);
    freed_starts_.erase(addr);
    return addr;
}

void Runtime::hfree(u64 addr) {
    auto it = heap_regions.find(addr);
    if (it == heap_regions.end()) {
        if (freed_starts_.count(addr)) fail("DoubleFree", std::to_string(addr));
        fail("NotARegionStart", std::to_string(addr));
    }
    const HeapRegion r = it->second;
    mem.unmap_range(r.start);  // preserves pages into open checkpoints first
    allocator(r.node).release(r.start, r.size);
    heap_regions.erase(it);
    freed_starts_.insert(addr);
}

u64 Runtime::hrealloc(u64 addr, u64 new_size) {
    auto it = heap_regions.find(addr);
    if (it == heap_regions.end()) {
        if (freed_starts_.count(addr)) fail("DoubleFree", std::to_string(addr));
        fail("NotARegionStart", std::to_string(addr));
    }
    if (new_size == 0) fail("ZeroSize", "realloc to 0 bytes");
    const HeapRegion old = it->second;

    std::vector<u8> keep(std::min(old.size, new_size));
    mem.read_bytes(old.start, keep);

    u64 naddr = allocator(old.node).acquire(new_size);
    MemRange r{naddr, round_cell(new_size), RangeKind::Heap, naddr, old.island, old.node};
    mem.map_range(r);
    mem.write_bytes(naddr, keep);

    HeapRegion region{naddr, new_size, old.bead, old.string_id, old.island, old.node,
                      next_epoch()};
    heap_regions.emplace(naddr, region);

    mem.unmap_range(old.start);
    allocator(old.node).release(old.start, old.size);
    heap_regions.erase(old.start);
    freed_starts_.insert(old.start);
    freed_starts_.erase(naddr);
    return naddr;
}

std::vector<HeapRegion> Runtime::regions_of_island(u64 island_id) const {
    std::vector<HeapRegion> out;
    for (auto& [start, r] : heap_regions)
        if (r.island == island_id) out.push_back(r);
    return out;
}

}  // namespace weaves
