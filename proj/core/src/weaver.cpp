#include <algorithm>
#include <set>

#include "weaves/runtime.hpp"

namespace weaves {

const GotEntry& GotTable::at(u64 module, u32 slot) const {
    auto it = slots.find(module);
    if (it == slots.end())
        fail("SlotOutOfRange", "module " + std::to_string(module) + " not in weave");
    if (slot >= it->second.size())
        fail("SlotOutOfRange", "slot " + std::to_string(slot) + " >= " +
                                   std::to_string(it->second.size()));
    return it->second[slot];
}

const Weave& Runtime::weave(u64 id) const {
    auto it = weaves.find(id);
    if (it == weaves.end()) fail("UnknownReference", "weave " + std::to_string(id));
    return it->second;
}

u64 Runtime::create_weave(const std::vector<u64>& bead_ids, const std::string& name) {
    if (bead_ids.empty()) fail("EmptyWeave", "a weave needs at least one bead");

    std::set<u64> seen_modules;
    std::set<u64> islands_seen;
    for (u64 bid : bead_ids) {
        const Bead& b = bead(bid);
        if (!seen_modules.insert(b.module).second)
            fail("DuplicateModule", module(b.module).name);
        if (b.island != 0) islands_seen.insert(b.island);
    }
    if (islands_seen.size() > 1) {
        std::string names;
        for (u64 i : islands_seen) names += (names.empty() ? "" : ",") + island(i).name;
        fail("IslandMismatch", "beads span islands " + names);
    }
    u64 island_id = islands_seen.empty() ? default_island : *islands_seen.begin();

    Weave w;
    w.id = counters.next_weave++;
    w.name = name.empty() ? "w" + std::to_string(w.id) : name;
    w.beads = bead_ids;
    w.island = island_id;
    w.create_epoch = next_epoch();

    // Data address for an exported symbol of a bead's module: the bead's
    // private copy, or the module-wide tuple store for tuple members.
    auto data_addr = [&](const Bead& b, const ModuleDef& def, u32 sym_index) -> u64 {
        const auto& s = def.symbols[sym_index];
        if (s.tuple_member) {
            const TupleStore& ts = tuples.at(def.id);
            return ts.member_addr.at(sym_index);
        }
        return b.data_base + s.offset;
    };

    // Pointer table construction: one entry per slot, no guest data copied.
    for (u64 bid : bead_ids) {
        const Bead& b = bead(bid);
        const ModuleDef& def = module(b.module);
        std::vector<GotEntry> entries(def.slot_count());
        for (size_t i = 0; i < def.symbols.size(); ++i) {
            const auto& s = def.symbols[i];
            if (s.kind == wof::SymbolKind::Data)
                entries[i] = GotEntry{true, data_addr(b, def, static_cast<u32>(i)), 0, 0};
            else
                entries[i] = GotEntry{false, 0, def.id, s.offset};
        }
        for (size_t i = 0; i < def.imports.size(); ++i) {
            const std::string& want = def.imports[i];
            const Bead* exporter_bead = nullptr;
            const ModuleDef* exporter_def = nullptr;
            const wof::SymbolEntry* exporter_sym = nullptr;
            u32 exporter_index = 0;
            std::vector<std::string> candidates;
            for (u64 obid : bead_ids) {
                if (obid == bid) continue;
                const Bead& ob = bead(obid);
                const ModuleDef& od = module(ob.module);
                for (size_t j = 0; j < od.symbols.size(); ++j) {
                    const auto& os = od.symbols[j];
                    if (!os.exported || os.name != want) continue;
                    candidates.push_back(od.name);
                    exporter_bead = &ob;
                    exporter_def = &od;
                    exporter_sym = &os;
                    exporter_index = static_cast<u32>(j);
                }
            }
            if (candidates.empty())
                fail("UnresolvedImport", def.name + " needs '" + want + "'");
            if (candidates.size() > 1) {
                std::string cs;
                for (auto& c : candidates) cs += (cs.empty() ? "" : ",") + c;
                fail("AmbiguousImport", "'" + want + "' exported by " + cs);
            }
            GotEntry e;
            if (exporter_sym->kind == wof::SymbolKind::Data) {
                e = GotEntry{true, data_addr(*exporter_bead, *exporter_def, exporter_index), 0, 0};
            } else {
                e = GotEntry{false, 0, exporter_def->id, exporter_sym->offset};
            }
            entries[def.symbols.size() + i] = e;
        }
        w.got.slots.emplace(def.id, std::move(entries));
    }

    u64 id = w.id;
    for (u64 bid : bead_ids) bead_weaves_[bid].insert(id);
    // Beads without an island adopt the weave's.
    if (island_id != 0)
        for (u64 bid : bead_ids)
            if (bead(bid).island == 0) set_bead_island(bid, island_id);
    weaves.emplace(id, std::move(w));
    return id;
}

void Runtime::retire_weave(u64 weave_id) {
    auto it = weaves.find(weave_id);
    if (it == weaves.end()) fail("UnknownReference", "weave " + std::to_string(weave_id));
    for (auto& [sid, s] : strings)
        if (s.weave == weave_id && (s.status == StrStatus::Running || s.status == StrStatus::Yielded))
            fail("WeaveInUse", "string " + std::to_string(sid) + " is live in weave " +
                                   std::to_string(weave_id));
    for (u64 bid : it->second.beads) {
        auto bw = bead_weaves_.find(bid);
        if (bw != bead_weaves_.end()) {
            bw->second.erase(weave_id);
            if (bw->second.empty()) bead_weaves_.erase(bw);
        }
    }
    weaves.erase(it);
}

const GotEntry& Runtime::got_lookup(u64 weave_id, u64 module_id, u32 slot) const {
    return weave(weave_id).got.at(module_id, slot);
}

std::vector<u64> Runtime::weave_membership(u64 bead_id) const {
    auto it = bead_weaves_.find(bead_id);
    if (it == bead_weaves_.end()) return {};
    return std::vector<u64>(it->second.begin(), it->second.end());
}

bool Runtime::bead_shared(u64 bead_id) const {
    auto it = bead_weaves_.find(bead_id);
    return it != bead_weaves_.end() && it->second.size() >= 2;
}

void Runtime::rebuild_weave_index() {
    bead_weaves_.clear();
    for (auto& [wid, w] : weaves)
        for (u64 bid : w.beads) bead_weaves_[bid].insert(wid);
}

const Island& Runtime::island(u64 id) const {
    auto it = islands.find(id);
    if (it == islands.end()) fail("UnknownReference", "island " + std::to_string(id));
    return it->second;
}

u64 Runtime::declare_island(const std::string& name, u32 home_node, int vm_region,
                            const std::vector<u64>& bead_ids) {
    if (home_node >= node_count) fail("UnknownNode", std::to_string(home_node));
    if (vm_region >= 0 && region_of_node(home_node) != static_cast<u32>(vm_region))
        fail("RegionConstraint", "home node " + std::to_string(home_node) + " is in region " +
                                     std::to_string(region_of_node(home_node)) + ", not " +
                                     std::to_string(vm_region));
    Island is;
    is.id = counters.next_island++;
    is.name = name;
    is.home_node = home_node;
    is.vm_region = vm_region;
    is.create_epoch = next_epoch();
    u64 id = is.id;
    islands.emplace(id, std::move(is));
    for (u64 bid : bead_ids) set_bead_island(bid, id);
    return id;
}

ValidationReport Runtime::validate_islands() const {
    ValidationReport rep;
    auto add = [&](std::string code, std::string msg) {
        rep.entries.push_back({std::move(code), std::move(msg)});
    };
    bool declared = !islands.empty();
    if (!declared) return rep;

    for (auto& [bid, b] : beads)
        if (b.island == 0)
            add("BeadWithoutIsland", "bead " + b.name + " is not part of any island");
    for (auto& [wid, w] : weaves) {
        std::set<u64> spans;
        for (u64 bid : w.beads) spans.insert(bead(bid).island);
        if (spans.size() > 1)
            add("WeaveSpansIslands", "weave " + w.name + " touches " +
                                         std::to_string(spans.size()) + " islands");
        else if (!spans.empty() && *spans.begin() != w.island)
            add("WeaveIslandMismatch", "weave " + w.name + " tagged with the wrong island");
    }
    for (auto& [sid, s] : strings) {
        if (s.status != StrStatus::Running && s.status != StrStatus::Yielded) continue;
        auto w = weaves.find(s.weave);
        if (w == weaves.end()) continue;
        if (s.island != w->second.island)
            add("StringIslandMismatch", "string " + s.name + " in foreign island");
    }
    for (auto& [mid, ts] : tuples) {
        std::set<u64> spans;
        for (auto& [bid, b] : beads)
            if (b.module == mid) spans.insert(b.island);
        if (spans.size() > 1)
            add("TupleSpansIslands",
                "tuple store of module " + module(mid).name + " is shared across islands");
    }
    return rep;
}

}  // namespace weaves
