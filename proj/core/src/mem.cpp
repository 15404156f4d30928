#include "weaves/mem.hpp"

#include <bit>
#include <cstring>

namespace weaves {

static_assert(std::endian::native == std::endian::little,
              "guest formats and cell access assume a little-endian host");

void VmMemory::map_range(const MemRange& r) {
    if (r.size == 0) fail("InvariantViolation", "zero-sized range");
    auto next = ranges_.lower_bound(r.start);
    if (next != ranges_.end() && next->second.start < r.end())
        fail("AddressCollision", "range at " + std::to_string(r.start) + " overlaps " +
                                     std::to_string(next->second.start));
    if (next != ranges_.begin()) {
        auto prev = std::prev(next);
        if (prev->second.end() > r.start)
            fail("AddressCollision", "range at " + std::to_string(r.start) + " overlaps " +
                                         std::to_string(prev->second.start));
    }
    ranges_.emplace(r.start, r);
    std::vector<u8> zeros(r.size, 0);
    write_bytes(r.start, zeros);
}

void VmMemory::unmap_range(u64 start) {
    auto it = ranges_.find(start);
    if (it == ranges_.end()) fail("InvariantViolation", "no range at " + std::to_string(start));
    MemRange r = it->second;
    if (unmap_observer_) unmap_observer_(r.start, r.size);
    // Preserve page contents into open checkpoints before they go away.
    for (u64 p = page_of(r.start); p <= page_of(r.end() - 1); ++p)
        if (pages_.count(p)) touch(p);
    ranges_.erase(it);
    // Drop pages no longer covered by any range.
    for (u64 p = page_of(r.start); p <= page_of(r.end() - 1); ++p) {
        if (!pages_.count(p)) continue;
        u64 page_start = p << kPageShift;
        u64 page_end = page_start + kPageSize;
        bool covered = false;
        auto next = ranges_.lower_bound(page_end);
        if (next != ranges_.begin()) {
            auto prev = std::prev(next);
            covered = prev->second.end() > page_start;
        }
        if (!covered) pages_.erase(p);
    }
}

const MemRange* VmMemory::find_range(u64 addr, u64 len) const {
    auto next = ranges_.upper_bound(addr);
    if (next == ranges_.begin()) return nullptr;
    const MemRange& r = std::prev(next)->second;
    if (addr >= r.start && addr + len <= r.end()) return &r;
    return nullptr;
}

const MemRange* VmMemory::range_at(u64 start) const {
    auto it = ranges_.find(start);
    return it == ranges_.end() ? nullptr : &it->second;
}

VmMemory::Page& VmMemory::ensure_page(u64 page_no) {
    auto it = pages_.find(page_no);
    if (it == pages_.end()) {
        auto page = std::make_unique<Page>();
        page->fill(0);
        it = pages_.emplace(page_no, std::move(page)).first;
    }
    return *it->second;
}

void VmMemory::touch(u64 page_no) {
    if (barrier_) barrier_(page_no);
}

Cell VmMemory::read_cell(u64 addr) const {
    auto it = pages_.find(page_of(addr));
    if (it == pages_.end()) fail("UnmappedAddress", std::to_string(addr));
    Cell v;
    std::memcpy(&v, it->second->data() + (addr & (kPageSize - 1)), 8);
    return v;
}

void VmMemory::write_cell(u64 addr, Cell v) {
    write_bytes(addr, std::span<const u8>(reinterpret_cast<const u8*>(&v), 8));
}

void VmMemory::read_bytes(u64 addr, std::span<u8> out) const {
    u64 pos = 0;
    while (pos < out.size()) {
        u64 a = addr + pos;
        auto it = pages_.find(page_of(a));
        if (it == pages_.end()) fail("UnmappedAddress", std::to_string(a));
        u64 in_page = a & (kPageSize - 1);
        u64 n = std::min<u64>(kPageSize - in_page, out.size() - pos);
        std::memcpy(out.data() + pos, it->second->data() + in_page, n);
        pos += n;
    }
}

void VmMemory::write_bytes(u64 addr, std::span<const u8> in) {
    u64 pos = 0;
    while (pos < in.size()) {
        u64 a = addr + pos;
        u64 p = page_of(a);
        touch(p);
        Page& page = ensure_page(p);
        u64 in_page = a & (kPageSize - 1);
        u64 n = std::min<u64>(kPageSize - in_page, in.size() - pos);
        std::memcpy(page.data() + in_page, in.data() + pos, n);
        pos += n;
    }
    if (observer_) observer_(addr, in.size());
}

const VmMemory::Page& VmMemory::page(u64 page_no) const {
    auto it = pages_.find(page_no);
    if (it == pages_.end()) fail("UnmappedAddress", "page " + std::to_string(page_no));
    return *it->second;
}

void VmMemory::write_page(u64 page_no, const Page& bytes) {
    touch(page_no);
    ensure_page(page_no) = bytes;
}

void VmMemory::drop_page(u64 page_no) {
    if (!pages_.count(page_no)) return;
    touch(page_no);
    pages_.erase(page_no);
}

void VmMemory::set_range_island(u64 start, u64 island) {
    auto it = ranges_.find(start);
    if (it == ranges_.end()) fail("InvariantViolation", "no range at " + std::to_string(start));
    it->second.island = island;
}

std::vector<u64> VmMemory::mapped_pages() const {
    std::vector<u64> out;
    out.reserve(pages_.size());
    for (auto& [no, _] : pages_) out.push_back(no);
    return out;
}

u64 VmMemory::digest() const {
    u64 h = 0xcbf29ce484222325ull;
    auto mix = [&](const void* p, size_t n) {
        h = fnv1a64({static_cast<const u8*>(p), n}, h);
    };
    for (auto& [start, r] : ranges_) {
        mix(&r.start, 8);
        mix(&r.size, 8);
        mix(&r.kind, 1);
        mix(&r.owner, 8);
        mix(&r.island, 8);
        u32 node = r.node;
        mix(&node, 4);
    }
    for (auto& [no, page] : pages_) {
        mix(&no, 8);
        mix(page->data(), kPageSize);
    }
    return h;
}

}  // namespace weaves
