#include <algorithm>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "weaves/isa.hpp"
#include "weaves/runtime.hpp"

namespace weaves {

namespace {
u64 round_cell(u64 n) { return (n + kCellSize - 1) & ~u64(kCellSize - 1); }
}

const wof::SymbolEntry* ModuleDef::find_export(const std::string& n) const {
    for (auto& s : symbols)
        if (s.exported && s.name == n) return &s;
    return nullptr;
}

int ModuleDef::slot_of(const std::string& n) const {
    for (size_t i = 0; i < symbols.size(); ++i)
        if (symbols[i].name == n) return static_cast<int>(i);
    for (size_t i = 0; i < imports.size(); ++i)
        if (imports[i] == n) return static_cast<int>(symbols.size() + i);
    return -1;
}

Runtime::Runtime() {
    mem.set_barrier([this](u64 page_no) { snapshot_barrier(page_no); });
}

const ModuleDef& Runtime::module(u64 id) const {
    auto it = modules.find(id);
    if (it == modules.end()) fail("UnknownReference", "module " + std::to_string(id));
    return it->second;
}

const Bead& Runtime::bead(u64 id) const {
    auto it = beads.find(id);
    if (it == beads.end()) fail("UnknownReference", "bead " + std::to_string(id));
    return it->second;
}

u64 Runtime::module_by_name(const std::string& name) const {
    for (auto& [id, m] : modules)
        if (m.name == name) return id;
    return 0;
}

u64 Runtime::define_module(const std::string& name, const std::vector<wof::ObjectModule>& objects) {
    if (objects.empty()) fail("EmptyModule", name);
    if (module_by_name(name) != 0) fail("DuplicateName", "module " + name);
    for (auto& o : objects) {
        auto issues = wof::validate_object(o);
        if (!issues.empty())
            fail("InvalidObject", "object '" + o.name + "' in module " + name + ": " +
                                      issues.front().code + " (" + issues.front().message + ")");
    }

    // Layout pass: concatenate code and data, number merged symbols.
    struct Base {
        u32 code, data, sym;
    };
    std::vector<Base> base(objects.size());
    u32 code_total = 0, data_total = 0, sym_total = 0;
    std::unordered_map<std::string, u32> exports;  // name -> merged symbol index
    for (size_t oi = 0; oi < objects.size(); ++oi) {
        base[oi] = {code_total, data_total, sym_total};
        code_total += static_cast<u32>(objects[oi].code.size());
        data_total += static_cast<u32>(objects[oi].data_template.size());
        sym_total += static_cast<u32>(objects[oi].symbols.size());
        for (size_t si = 0; si < objects[oi].symbols.size(); ++si) {
            const auto& s = objects[oi].symbols[si];
            if (!s.exported) continue;
            u32 merged = base[oi].sym + static_cast<u32>(si);
            if (!exports.emplace(s.name, merged).second) fail("DuplicateExport", s.name);
        }
    }

    ModuleDef def;
    def.name = name;
    def.code.reserve(code_total);
    def.data_template.reserve(data_total);
    def.symbols.reserve(sym_total);

    // Imports that no sibling object exports stay for weave-time resolution.
    std::unordered_map<std::string, u32> unresolved;  // name -> import index
    for (auto& o : objects)
        for (auto& imp : o.imports)
            if (!exports.count(imp) && !unresolved.count(imp)) {
                unresolved.emplace(imp, static_cast<u32>(def.imports.size()));
                def.imports.push_back(imp);
            }

    for (size_t oi = 0; oi < objects.size(); ++oi) {
        const auto& o = objects[oi];
        def.data_template.insert(def.data_template.end(), o.data_template.begin(),
                                 o.data_template.end());
        for (auto& s : o.symbols) {
            wof::SymbolEntry merged = s;
            merged.offset += s.kind == wof::SymbolKind::Data ? base[oi].data : base[oi].code;
            def.symbols.push_back(merged);
            if (merged.kind == wof::SymbolKind::Function)
                def.func_locals[merged.offset] = merged.size;
        }

        // Slot operands are object-local; rebase them onto the merged table.
        u32 own = static_cast<u32>(o.symbols.size());
        auto merged_slot = [&](u16 slot) -> u16 {
            if (slot < own) return static_cast<u16>(base[oi].sym + slot);
            const std::string& imp = o.imports[slot - own];
            if (auto it = exports.find(imp); it != exports.end())
                return static_cast<u16>(it->second);
            return static_cast<u16>(sym_total + unresolved.at(imp));
        };
        std::vector<u8> code = o.code;
        u32 off = 0;
        while (off < code.size()) {
            auto d = *decode_insn(code, off);
            switch (d.op) {
                case Op::LoadG:
                case Op::StoreG:
                case Op::AddrG:
                case Op::Call: {
                    u16 s = merged_slot(d.slot);
                    std::memcpy(code.data() + off + 1, &s, 2);
                    break;
                }
                case Op::Jmp:
                case Op::Jz: {
                    u32 t = d.target + base[oi].code;
                    std::memcpy(code.data() + off + 1, &t, 4);
                    break;
                }
                default:
                    break;
            }
            off += d.length;
        }
        def.code.insert(def.code.end(), code.begin(), code.end());
    }

    def.id = counters.next_module++;
    def.create_epoch = next_epoch();
    u64 id = def.id;
    modules.emplace(id, std::move(def));
    return id;
}

void Runtime::set_tuple_override(u64 module_id, const std::string& symbol) {
    auto it = modules.find(module_id);
    if (it == modules.end()) fail("UnknownReference", "module " + std::to_string(module_id));
    for (auto& [bid, b] : beads)
        if (b.module == module_id)
            fail("InvariantViolation",
                 "tuple override for '" + symbol + "' after instantiation of " + it->second.name);
    for (auto& s : it->second.symbols) {
        if (s.name == symbol) {
            if (s.kind != wof::SymbolKind::Data)
                fail("InvariantViolation", "tuple override on function '" + symbol + "'");
            s.tuple_member = true;
            return;
        }
    }
    fail("UnknownReference", "symbol " + symbol + " in module " + it->second.name);
}

u64 Runtime::instantiate_bead(u64 module_id, u32 node, const std::string& name) {
    const ModuleDef& def = module(module_id);
    if (node >= node_count) fail("UnknownNode", std::to_string(node));

    Bead b;
    b.id = counters.next_bead++;
    b.name = name.empty() ? def.name + "#" + std::to_string(b.id) : name;
    b.module = module_id;
    b.node = node;
    b.island = default_island;
    b.create_epoch = next_epoch();

    // The data context copy always comes from the pristine template. A bead
    // with no globals still gets a unique (reserved) base address.
    u64 want = std::max<u64>(round_cell(def.data_template.size()), kCellSize);
    b.data_base = allocator(node).acquire(want);
    b.data_size = want;
    mem.map_range({b.data_base, want, RangeKind::BeadData, b.id, b.island, node});
    if (!def.data_template.empty()) {
        mem.write_bytes(b.data_base, def.data_template);
        counters.bead_copy_bytes += def.data_template.size();
    }

    // Tuple members bind the module-wide shared store instead, allocating it
    // on first instantiation.
    bool has_tuple = std::any_of(def.symbols.begin(), def.symbols.end(),
                                 [](auto& s) { return s.tuple_member; });
    if (has_tuple) {
        auto it = tuples.find(module_id);
        if (it == tuples.end()) {
            TupleStore ts;
            ts.module = module_id;
            ts.node = node;
            ts.island = b.island;
            u64 total = 0;
            for (size_t i = 0; i < def.symbols.size(); ++i)
                if (def.symbols[i].tuple_member) total += def.symbols[i].size;
            ts.size = total;
            ts.base = allocator(node).acquire(total);
            mem.map_range({ts.base, round_cell(total), RangeKind::Tuple, module_id, ts.island,
                           node});
            u64 off = 0;
            for (size_t i = 0; i < def.symbols.size(); ++i) {
                const auto& s = def.symbols[i];
                if (!s.tuple_member) continue;
                ts.member_addr[static_cast<u32>(i)] = ts.base + off;
                mem.write_bytes(ts.base + off,
                                std::span<const u8>(def.data_template.data() + s.offset, s.size));
                off += s.size;
            }
            it = tuples.emplace(module_id, std::move(ts)).first;
        }
        it->second.refcount++;
    }

    u64 id = b.id;
    beads.emplace(id, std::move(b));
    return id;
}

void Runtime::set_bead_island(u64 bead_id, u64 island_id) {
    auto it = beads.find(bead_id);
    if (it == beads.end()) fail("UnknownReference", "bead " + std::to_string(bead_id));
    it->second.island = island_id;
    mem.set_range_island(it->second.data_base, island_id);
    auto ts = tuples.find(it->second.module);
    if (ts != tuples.end() && ts->second.island == 0) {
        ts->second.island = island_id;
        mem.set_range_island(ts->second.base, island_id);
    }
}

void Runtime::destroy_bead(u64 bead_id) {
    auto it = beads.find(bead_id);
    if (it == beads.end()) fail("UnknownReference", "bead " + std::to_string(bead_id));
    auto member_of = weave_membership(bead_id);
    if (!member_of.empty()) {
        std::string ids;
        for (u64 w : member_of) ids += (ids.empty() ? "" : ",") + std::to_string(w);
        fail("BeadInUse", "bead " + std::to_string(bead_id) + " in weave(s) " + ids);
    }
    const Bead b = it->second;
    mem.unmap_range(b.data_base);
    allocator(b.node).release(b.data_base, b.data_size);

    auto ts = tuples.find(b.module);
    if (ts != tuples.end()) {
        if (--ts->second.refcount == 0) {
            mem.unmap_range(ts->second.base);
            allocator(ts->second.node).release(ts->second.base, ts->second.size);
            tuples.erase(ts);
        }
    }
    beads.erase(it);
}

}  // namespace weaves
