#pragma once

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "weaves/common.hpp"
#include "weaves/mem.hpp"
#include "weaves/wof.hpp"

namespace weaves {

// ---------------------------------------------------------------------------
// Registry: module definitions, beads, tuple stores
// ---------------------------------------------------------------------------

// A defined module: one or more object files merged into a single code blob,
// data template and symbol table. Intra-module imports are resolved at
// definition time by patching GOT slot operands; what remains in `imports`
// is resolved per weave.
struct ModuleDef {
    u64 id = 0;
    std::string name;
    std::vector<u8> code;
    std::vector<u8> data_template;
    std::vector<wof::SymbolEntry> symbols;  // merged, offsets rebased
    std::vector<std::string> imports;       // unresolved after intra-module linking
    std::map<u32, u32> func_locals;         // entry offset -> declared locals count
    u64 create_epoch = 0;

    u32 slot_count() const { return static_cast<u32>(symbols.size() + imports.size()); }
    const wof::SymbolEntry* find_export(const std::string& n) const;
    int slot_of(const std::string& n) const;
};

// One instantiation of a module: a private copy of its data template at a
// concrete address inside its node's partition.
struct Bead {
    u64 id = 0;
    std::string name;
    u64 module = 0;
    u64 data_base = 0;
    u64 data_size = 0;   // mapped range size (template rounded up to a cell)
    u32 node = 0;
    u64 island = 0;      // 0 = not yet assigned
    u64 create_epoch = 0;
};

// Shared storage for a module's tuple-member symbols; one per module,
// created at first instantiation and freed when the last bead goes.
struct TupleStore {
    u64 module = 0;
    u64 base = 0;
    u64 size = 0;
    u32 node = 0;
    u64 island = 0;
    u32 refcount = 0;
    std::map<u32, u64> member_addr;  // merged symbol index -> address
};

// ---------------------------------------------------------------------------
// Weaver: namespaces as per-weave GOT structures
// ---------------------------------------------------------------------------

struct GotEntry {
    bool is_data = true;
    u64 addr = 0;         // data: absolute address of the storage
    u64 code_module = 0;  // function: exporting module id
    u32 code_offset = 0;  // function: entry offset in that module's code

    bool operator==(const GotEntry&) const = default;
};

// Per (module, slot) pointer table. Total: every slot of every participating
// module has an entry. Immutable once the weave is created.
struct GotTable {
    std::map<u64, std::vector<GotEntry>> slots;  // module id -> slot-indexed entries

    const GotEntry& at(u64 module, u32 slot) const;
};

struct Weave {
    u64 id = 0;
    std::string name;
    std::vector<u64> beads;  // one per module
    GotTable got;
    u64 island = 0;
    u64 create_epoch = 0;
};

// ---------------------------------------------------------------------------
// Strings: schedulable flows
// ---------------------------------------------------------------------------

enum class StrStatus : u8 { Running = 0, Yielded = 1, Halted = 2, Trapped = 3 };

enum class TrapKind : u8 {
    None = 0,
    DivByZero,
    UnmappedAddress,
    StackUnderflow,
    BadOpcode,
    CrossIslandAccess,
    NotAFunction,
    MisalignedAddress,
    BadLocal,
    HeapFault,
    StackOverflow,
};

struct Trap {
    TrapKind kind = TrapKind::None;
    u64 addr = 0;
    std::string detail;
};

const char* trap_kind_name(TrapKind k);

struct Frame {
    u64 module = 0;      // function owner
    u32 entry = 0;       // function entry offset
    u64 ret_module = 0;  // return address (module, offset); unused in frame 0
    u32 ret_ip = 0;
    std::vector<Cell> locals;

    bool operator==(const Frame&) const = default;
};

// Result of an executor slice.
enum class RunOutcome : u8 { Yielded, Halted, Trapped, QuantumExpired };
struct ExecResult {
    RunOutcome outcome;
    u64 consumed = 0;  // instructions retired in this slice
};

struct StringState {
    u64 id = 0;
    std::string name;
    u64 weave = 0;
    u64 module = 0;  // current instruction pointer: (module, ip)
    u32 ip = 0;
    std::vector<Frame> frames;
    std::vector<Cell> stack;
    StrStatus status = StrStatus::Running;
    Trap trap;
    u64 island = 0;
    bool in_shared_bead = false;  // recomputed at every switch point
    u64 instr_retired = 0;
    u64 create_epoch = 0;
};

struct EquivalenceClass {
    u64 class_id = 0;            // smallest member string id
    std::vector<u64> members;    // ascending string ids
};

enum class SchedKind : u8 { Cooperative = 0, Preemptive = 1, Adversarial = 2 };

struct SchedPolicy {
    SchedKind kind = SchedKind::Cooperative;
    u64 quantum = 1000;      // preemptive
    u64 seed = 1;            // adversarial: quantum drawn per slice
    u64 quantum_lo = 1;
    u64 quantum_hi = 7;
};

// ---------------------------------------------------------------------------
// Heap
// ---------------------------------------------------------------------------

struct HeapRegion {
    u64 start = 0;
    u64 size = 0;       // requested bytes
    u64 bead = 0;       // allocating frame's bead (documented attribution rule)
    u64 string_id = 0;
    u64 island = 0;
    u32 node = 0;
    u64 alloc_epoch = 0;
};

// Bump-with-free-list allocator over one node's 2^40-byte partition.
// First-fit on the address-ordered free list keeps placement deterministic.
struct NodeAllocator {
    u32 node = 0;
    u64 cursor = kPageSize;       // offset 0 stays unmapped so null traps
    std::map<u64, u64> free_list; // start offset -> size

    u64 acquire(u64 size);        // returns absolute address; throws PartitionExhausted
    void release(u64 addr, u64 size);
    void reserve_through(u64 addr_end);  // admit path: never allocate below this again
};

// ---------------------------------------------------------------------------
// Islands & checkpoints
// ---------------------------------------------------------------------------

struct Island {
    u64 id = 0;
    std::string name;
    u32 home_node = 0;
    int vm_region = -1;  // -1: unconstrained
    u64 create_epoch = 0;
};

enum class CheckpointMode : u8 { Naive = 0, Cow = 1 };

struct Counters {
    u64 epoch = 0;  // global creation/allocation sequence
    u64 next_module = 1, next_bead = 1, next_weave = 1, next_string = 1, next_island = 1;
    u64 clock = 0;  // instructions retired, tapestry-wide
    u64 switches = 0;
    u64 switch_ops = 0;         // bounded bookkeeping steps on the switch path
    u64 switch_copy_bytes = 0;  // guest data bytes copied by switches (stays 0)
    u64 bead_copy_bytes = 0;    // template bytes copied at bead creation
    u64 weave_copy_bytes = 0;   // guest data bytes copied by weave creation (stays 0)
    u64 spawn_copy_bytes = 0;   // guest data bytes copied by spawns (stays 0)
};

struct SchedState {
    SchedPolicy policy;
    u64 rr_last = 0;  // string id that ran last
    std::string rng_state;  // mt19937_64 text serialization (adversarial mode)
};

// Everything restore needs beyond page contents, copied at checkpoint time.
struct TopologySnapshot {
    std::map<u64, Bead> beads;
    std::map<u64, TupleStore> tuples;
    std::map<u64, Weave> weaves;
    std::map<u64, StringState> strings;
    std::map<u64, Island> islands;
    std::map<u64, HeapRegion> heap_regions;  // keyed by start, live only
    std::map<u32, NodeAllocator> allocators;
    std::set<u64> freed_starts;
    Counters counters;
    SchedState sched;
};

struct Checkpoint {
    std::string name;
    CheckpointMode mode = CheckpointMode::Cow;
    u64 watermark = 0;  // epoch at checkpoint time
    // Pages clean since the checkpoint. Under COW this starts as every mapped
    // page and shrinks as first writes move originals into page_store; naive
    // mode fills page_store eagerly and leaves this empty.
    std::set<u64> clean_pages;
    std::map<u64, VmMemory::Page> page_store;
    TopologySnapshot topo;
    u64 create_epoch = 0;
};

struct ValidationReport {
    struct Entry {
        std::string code;
        std::string message;
    };
    std::vector<Entry> entries;
    bool ok() const { return entries.empty(); }
};

struct OutputChunk {
    u64 string_id;
    std::string text;
};

// ---------------------------------------------------------------------------
// Runtime
// ---------------------------------------------------------------------------

// The tapestry runtime: registry, weaves, strings, heap, memory, checkpoints
// and migration, driven single-threaded. Exactly one string executes at a
// time; the monitor feeds commands through a queue drained at safe points.
class Runtime {
public:
    Runtime();

    // --- registry ---
    u64 define_module(const std::string& name, const std::vector<wof::ObjectModule>& objects);
    u64 instantiate_bead(u64 module_id, u32 node, const std::string& name = "");
    void destroy_bead(u64 bead_id);
    void set_tuple_override(u64 module_id, const std::string& symbol);
    void set_bead_island(u64 bead_id, u64 island_id);
    const ModuleDef& module(u64 id) const;
    const Bead& bead(u64 id) const;
    u64 module_by_name(const std::string& name) const;  // 0 if absent

    // --- weaver ---
    u64 create_weave(const std::vector<u64>& bead_ids, const std::string& name = "");
    void retire_weave(u64 weave_id);
    const Weave& weave(u64 id) const;
    const GotEntry& got_lookup(u64 weave_id, u64 module_id, u32 slot) const;
    std::vector<u64> weave_membership(u64 bead_id) const;
    bool bead_shared(u64 bead_id) const;  // member of >= 2 live weaves

    // --- strings ---
    u64 spawn_string(u64 weave_id, const std::string& entry, const std::vector<Cell>& args,
                     const std::string& name = "");
    void context_switch(u64 from, u64 to);
    std::vector<EquivalenceClass> compute_equivalence_classes() const;
    /// Runs until no string is runnable. Drains the monitor queue (if a
    /// drain hook is installed) at every switch boundary.
    void schedule();
    void set_policy(const SchedPolicy& p);
    const StringState& string_state(u64 id) const;
    StringState& string_state_mut(u64 id);

    // --- executor ---
    ExecResult step(StringState& s);
    ExecResult run_quantum(StringState& s, u64 fuel);

    // --- heap ---
    u64 halloc(u32 node, u64 size, u64 bead_id, u64 string_id, u64 island);
    void hfree(u64 addr);
    u64 hrealloc(u64 addr, u64 new_size);
    std::vector<HeapRegion> regions_of_island(u64 island) const;

    // --- islands ---
    u64 declare_island(const std::string& name, u32 home_node, int vm_region,
                       const std::vector<u64>& bead_ids);
    ValidationReport validate_islands() const;
    const Island& island(u64 id) const;

    // --- snapshot ---
    void checkpoint(const std::string& name, CheckpointMode mode);
    void restore(const std::string& name);
    std::vector<u8> dump_checkpoint(const std::string& name) const;
    void load_checkpoint(std::span<const u8> bytes);
    const Checkpoint& checkpoint_info(const std::string& name) const;

    // --- migration ---
    std::vector<u8> package_island(u64 island_id) const;
    void admit_island(std::span<const u8> bytes, u32 target_node);
    void migrate(u64 island_id, u32 target_node);

    // --- introspection / plumbing ---
    u64 memory_digest() const;
    u64 next_epoch() { return ++counters.epoch; }
    void set_monitor_drain(std::function<void()> f) { monitor_drain_ = std::move(f); }
    void set_output_sink(std::function<void(u64, std::string_view)> f) {
        output_sink_ = std::move(f);
    }
    const std::string& string_output(u64 string_id) const;
    bool any_runnable() const;

    // State tables (public on purpose: the monitor, loader, tests and the
    // snapshot/migrate paths all walk them; the runtime is single-threaded).
    VmMemory mem;
    Counters counters;
    SchedState sched;
    std::map<u64, ModuleDef> modules;
    std::map<u64, Bead> beads;
    std::map<u64, TupleStore> tuples;  // module id -> store
    std::map<u64, Weave> weaves;
    std::map<u64, StringState> strings;
    std::map<u64, Island> islands;
    std::map<u64, HeapRegion> heap_regions;  // by start, live only
    std::map<u32, NodeAllocator> allocators;
    std::map<std::string, Checkpoint> checkpoints;
    std::vector<OutputChunk> output_trace;
    std::map<u64, std::string> string_output_;  // per-string accumulated output
    u32 node_count = 1;
    u64 default_island = 0;  // implicit island when the config declares none
    bool verify_reentrancy = false;      // assert the per-class guard at every switch
    mutable u64 reentrancy_checks = 0;   // number of guard evaluations

    std::mt19937_64& rng();

private:
    friend struct RuntimeTestPeer;

    NodeAllocator& allocator(u32 node);
    void rebuild_weave_index();
    void recompute_shared_flag(StringState& s);
    u32 string_node(const StringState& s) const;
    void emit_output(StringState& s, std::string text);
    void snapshot_barrier(u64 page_no);
    TopologySnapshot take_topology() const;
    void apply_topology(const TopologySnapshot& t);
    void check_safe_point() const;

    // Executor internals (vm.cpp)
    struct ExecCtx;
    bool exec_one(StringState& s, ExecCtx& ctx);

    // scheduling (strings.cpp)
    u64 pick_next(u64 current, bool voluntary);
    bool eligible(const StringState& s) const;
    void rebuild_classes() const;
    void check_reentrancy(u64 incoming) const;

    std::map<u64, std::set<u64>> bead_weaves_;  // bead -> live weave ids
    std::set<u64> freed_starts_;                // heap region starts seen by hfree
    mutable std::map<u64, u64> class_root_;     // string id -> class id
    mutable std::map<u64, std::vector<u64>> class_members_;
    mutable bool classes_dirty_ = true;
    std::function<void()> monitor_drain_;
    std::function<void(u64, std::string_view)> output_sink_;
    std::mt19937_64 rng_;
    bool rng_dirty_ = true;
    bool in_slice_ = false;
};

// Serialization helpers shared by snapshot and migrate (wire.cpp)
namespace wire {
void put_string_state(ByteWriter& w, const StringState& s);
StringState get_string_state(ByteReader& r);
void put_got(ByteWriter& w, const GotTable& g);
GotTable get_got(ByteReader& r);
void put_weave(ByteWriter& w, const Weave& v);
Weave get_weave(ByteReader& r);
void put_bead(ByteWriter& w, const Bead& b);
Bead get_bead(ByteReader& r);
void put_tuple(ByteWriter& w, const TupleStore& t);
TupleStore get_tuple(ByteReader& r);
void put_region(ByteWriter& w, const HeapRegion& h);
HeapRegion get_region(ByteReader& r);
void put_island(ByteWriter& w, const Island& i);
Island get_island(ByteReader& r);
void put_allocator(ByteWriter& w, const NodeAllocator& a);
NodeAllocator get_allocator(ByteReader& r);
void put_counters(ByteWriter& w, const Counters& c);
Counters get_counters(ByteReader& r);
void put_sched(ByteWriter& w, const SchedState& s);
SchedState get_sched(ByteReader& r);
}  // namespace wire

}  // namespace weaves
