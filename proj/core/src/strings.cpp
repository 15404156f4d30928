#include <algorithm>
#include <sstream>

#include "weaves/runtime.hpp"

namespace weaves {

const StringState& Runtime::string_state(u64 id) const {
    auto it = strings.find(id);
    if (it == strings.end()) fail("DeadString", "string " + std::to_string(id));
    return it->second;
}

StringState& Runtime::string_state_mut(u64 id) {
    auto it = strings.find(id);
    if (it == strings.end()) fail("DeadString", "string " + std::to_string(id));
    return it->second;
}

std::mt19937_64& Runtime::rng() {
    if (rng_dirty_) {
        if (sched.rng_state.empty()) {
            rng_.seed(sched.policy.seed);
        } else {
            std::istringstream in(sched.rng_state);
            in >> rng_;
        }
        rng_dirty_ = false;
    }
    return rng_;
}

void Runtime::set_policy(const SchedPolicy& p) {
    sched.policy = p;
    sched.rng_state.clear();
    rng_dirty_ = true;
}

u64 Runtime::spawn_string(u64 weave_id, const std::string& entry,
                          const std::vector<Cell>& args, const std::string& name) {
    const Weave& w = weave(weave_id);

    // entry is either "module:function" or a bare function name that must
    // resolve uniquely across the weave's modules.
    std::string mod_part, fn_part = entry;
    if (auto colon = entry.find(':'); colon != std::string::npos) {
        mod_part = entry.substr(0, colon);
        fn_part = entry.substr(colon + 1);
    }
    const ModuleDef* target = nullptr;
    const wof::SymbolEntry* fn = nullptr;
    for (u64 bid : w.beads) {
        const ModuleDef& def = module(bead(bid).module);
        if (!mod_part.empty() && def.name != mod_part) continue;
        const wof::SymbolEntry* e = def.find_export(fn_part);
        if (e && e->kind == wof::SymbolKind::Function) {
            if (target)
                fail("UnresolvedEntry", "'" + entry + "' is ambiguous (" + target->name +
                                            " and " + def.name + ")");
            target = &def;
            fn = e;
        }
    }
    if (!fn) fail("UnresolvedEntry", entry);

    StringState s;
    s.id = counters.next_string++;
    s.name = name.empty() ? "s" + std::to_string(s.id) : name;
    s.weave = weave_id;
    s.module = target->id;
    s.ip = fn->offset;
    s.island = w.island;
    s.create_epoch = next_epoch();

    Frame f;
    f.module = target->id;
    f.entry = fn->offset;
    f.locals.assign(std::max<size_t>(fn->size, args.size()), 0);
    std::copy(args.begin(), args.end(), f.locals.begin());
    s.frames.push_back(std::move(f));
    // Spawn binds existing beads; no global data is copied here.
    counters.spawn_copy_bytes += 0;

    u64 id = s.id;
    strings.emplace(id, std::move(s));
    recompute_shared_flag(strings.at(id));
    classes_dirty_ = true;
    return id;
}

void Runtime::recompute_shared_flag(StringState& s) {
    // True iff any live frame executes inside a module whose bead (in this
    // string's weave) is shared by two or more live weaves.
    bool shared = false;
    auto wit = weaves.find(s.weave);
    if (wit != weaves.end()) {
        for (const Frame& f : s.frames) {
            ++counters.switch_ops;
            for (u64 bid : wit->second.beads) {
                const Bead& b = bead(bid);
                if (b.module == f.module && bead_shared(bid)) {
                    shared = true;
                    break;
                }
            }
            if (shared) break;
        }
    }
    s.in_shared_bead = shared;
}

void Runtime::context_switch(u64 from, u64 to) {
    StringState& f = string_state_mut(from);
    StringState& t = string_state_mut(to);
    if (f.status == StrStatus::Halted || f.status == StrStatus::Trapped)
        fail("DeadString", "switch from dead string " + std::to_string(from));
    if (t.status == StrStatus::Halted || t.status == StrStatus::Trapped)
        fail("DeadString", "switch to dead string " + std::to_string(to));
    // The executor cursor already lives in the string state, so saving and
    // restoring is a constant number of bookkeeping steps; no guest data
    // moves regardless of how many globals the weaves carry.
    ++counters.switch_ops;  // save from's cursor
    recompute_shared_flag(f);
    ++counters.switch_ops;  // restore to's cursor (weave reference included)
    counters.switch_copy_bytes += 0;
    ++counters.switches;
}

std::vector<EquivalenceClass> Runtime::compute_equivalence_classes() const {
    // Union-find over "weaves share a bead", then strings grouped by the
    // class of their weave.
    std::map<u64, u64> parent;  // weave id -> parent weave id
    std::function<u64(u64)> find = [&](u64 x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (auto& [wid, w] : weaves) parent[wid] = wid;
    for (auto& [bid, wids] : bead_weaves_) {
        if (wids.size() < 2) continue;
        u64 first = *wids.begin();
        for (u64 other : wids) {
            u64 a = find(first), b = find(other);
            if (a != b) parent[std::max(a, b)] = std::min(a, b);
        }
    }
    std::map<u64, EquivalenceClass> by_root;  // root weave -> class
    for (auto& [sid, s] : strings) {
        if (!weaves.count(s.weave)) continue;
        by_root[find(s.weave)].members.push_back(sid);
    }
    std::vector<EquivalenceClass> out;
    for (auto& [root, cls] : by_root) {
        EquivalenceClass c = cls;
        std::sort(c.members.begin(), c.members.end());
        c.class_id = c.members.front();
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(),
              [](auto& a, auto& b) { return a.class_id < b.class_id; });
    return out;
}

void Runtime::rebuild_classes() const {
    class_root_.clear();
    class_members_.clear();
    for (const auto& cls : compute_equivalence_classes()) {
        for (u64 sid : cls.members) {
            class_root_[sid] = cls.class_id;
            class_members_[cls.class_id].push_back(sid);
        }
    }
    classes_dirty_ = false;
}

bool Runtime::eligible(const StringState& s) const {
    if (s.status != StrStatus::Running && s.status != StrStatus::Yielded) return false;
    if (sched.policy.kind == SchedKind::Cooperative) return true;
    // Preemptive policies never run a string while another live string of
    // its equivalence class sits inside a shared bead's frames; this keeps
    // at most one string per class mid-execution in non-reentrant code.
    if (classes_dirty_) rebuild_classes();
    auto root = class_root_.find(s.id);
    if (root == class_root_.end()) return true;
    for (u64 other : class_members_.at(root->second)) {
        if (other == s.id) continue;
        const StringState& o = strings.at(other);
        if ((o.status == StrStatus::Running || o.status == StrStatus::Yielded) &&
            o.in_shared_bead)
            return false;
    }
    return true;
}

u64 Runtime::pick_next(u64 current, bool /*voluntary*/) {
    if (strings.empty()) return 0;
    // Round-robin in ascending string id starting after `current`.
    auto begin = strings.upper_bound(current);
    auto scan = [&](std::map<u64, StringState>::iterator it,
                    std::map<u64, StringState>::iterator end) -> u64 {
        for (; it != end; ++it)
            if (eligible(it->second)) return it->first;
        return 0;
    };
    if (u64 id = scan(begin, strings.end())) return id;
    if (u64 id = scan(strings.begin(), begin)) return id;
    return 0;
}

bool Runtime::any_runnable() const {
    for (auto& [id, s] : strings)
        if (s.status == StrStatus::Running || s.status == StrStatus::Yielded) return true;
    return false;
}

void Runtime::schedule() {
    u64 prev = 0;
    while (true) {
        if (monitor_drain_) monitor_drain_();
        u64 next = pick_next(sched.rr_last, true);
        if (next == 0) {
            if (any_runnable())
                fail("Deadlock", "live strings exist but none is eligible to run");
            return;
        }
        if (prev != 0 && prev != next) {
            auto pit = strings.find(prev);
            if (pit != strings.end() && (pit->second.status == StrStatus::Running ||
                                         pit->second.status == StrStatus::Yielded)) {
                context_switch(prev, next);
            } else {
                ++counters.switches;  // successor start after a halt/trap
            }
            if (verify_reentrancy) check_reentrancy(next);
        }

        u64 fuel;
        switch (sched.policy.kind) {
            case SchedKind::Cooperative: fuel = u64(1) << 62; break;
            case SchedKind::Preemptive: fuel = sched.policy.quantum; break;
            case SchedKind::Adversarial: {
                std::uniform_int_distribution<u64> d(sched.policy.quantum_lo,
                                                     sched.policy.quantum_hi);
                fuel = d(rng());
                break;
            }
            default: fuel = sched.policy.quantum; break;
        }

        StringState& s = strings.at(next);
        run_quantum(s, fuel);
        recompute_shared_flag(s);  // preemption-time state, used by eligibility
        sched.rr_last = next;
        prev = next;
    }
}

void Runtime::check_reentrancy(u64 incoming) const {
    if (classes_dirty_) rebuild_classes();
    ++reentrancy_checks;
    auto root = class_root_.find(incoming);
    if (root == class_root_.end()) return;
    u64 inside = 0;
    for (u64 sid : class_members_.at(root->second)) {
        const StringState& s = strings.at(sid);
        bool live = s.status == StrStatus::Running || s.status == StrStatus::Yielded;
        if (live && s.in_shared_bead) ++inside;
    }
    const StringState& in = strings.at(incoming);
    if (inside > 1 || (inside == 1 && !in.in_shared_bead))
        fail("ReentrancyViolation",
             "class " + std::to_string(root->second) + " has " + std::to_string(inside) +
                 " strings inside a shared bead at a switch to " + std::to_string(incoming));
}

}  // namespace weaves
