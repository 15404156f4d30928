#include <cstring>

#include "weaves/isa.hpp"
#include "weaves/runtime.hpp"

namespace weaves {

const char* trap_kind_name(TrapKind k) {
    switch (k) {
        case TrapKind::None: return "None";
        case TrapKind::DivByZero: return "DivByZero";
        case TrapKind::UnmappedAddress: return "UnmappedAddress";
        case TrapKind::StackUnderflow: return "StackUnderflow";
        case TrapKind::BadOpcode: return "BadOpcode";
        case TrapKind::CrossIslandAccess: return "CrossIslandAccess";
        case TrapKind::NotAFunction: return "NotAFunction";
        case TrapKind::MisalignedAddress: return "MisalignedAddress";
        case TrapKind::BadLocal: return "BadLocal";
        case TrapKind::HeapFault: return "HeapFault";
        case TrapKind::StackOverflow: return "StackOverflow";
    }
    return "?";
}

namespace {
constexpr u64 kMaxFrames = 16384;
}

// Cached cursor for the string currently on the executor. Refreshing happens
// on slice entry and whenever the (module, weave) pair changes (call/ret).
struct Runtime::ExecCtx {
    const ModuleDef* mod = nullptr;
    const std::vector<GotEntry>* got = nullptr;
    const Weave* wv = nullptr;
    const u8* code = nullptr;
    u32 code_size = 0;
    u64 cur_bead = 0;  // bead whose code frame is executing (allocation attribution)

    void refresh(Runtime& rt, StringState& s) {
        wv = &rt.weave(s.weave);
        mod = &rt.module(s.module);
        auto it = wv->got.slots.find(s.module);
        if (it == wv->got.slots.end())
            fail("SlotOutOfRange", "module " + mod->name + " not in weave " + wv->name);
        got = &it->second;
        code = mod->code.data();
        code_size = static_cast<u32>(mod->code.size());
        cur_bead = 0;
        for (u64 bid : wv->beads)
            if (rt.bead(bid).module == s.module) {
                cur_bead = bid;
                break;
            }
    }
};

u32 Runtime::string_node(const StringState& s) const {
    if (s.island != 0) {
        auto it = islands.find(s.island);
        if (it != islands.end()) return it->second.home_node;
    }
    const Weave& w = weave(s.weave);
    return bead(w.beads.front()).node;
}

void Runtime::emit_output(StringState& s, std::string text) {
    string_output_[s.id] += text;
    if (output_sink_) output_sink_(s.id, text);
    output_trace.push_back({s.id, std::move(text)});
}

const std::string& Runtime::string_output(u64 string_id) const {
    static const std::string empty;
    auto it = string_output_.find(string_id);
    return it == string_output_.end() ? empty : it->second;
}

bool Runtime::exec_one(StringState& s, ExecCtx& ctx) {
    auto trap = [&](TrapKind k, u64 addr, std::string detail) {
        s.status = StrStatus::Trapped;
        s.trap = Trap{k, addr, std::move(detail)};
        return false;
    };

    u32 ip = s.ip;
    if (ip >= ctx.code_size)
        return trap(TrapKind::BadOpcode, ip, "instruction pointer past code end");
    const u8* code = ctx.code;
    u8 raw = code[ip];
    u32 len = insn_length(raw);
    if (len == 0 || ip + len > ctx.code_size)
        return trap(TrapKind::BadOpcode, ip, "undecodable instruction");

    auto& stack = s.stack;
    auto pop = [&](Cell& out) {
        if (stack.empty()) return false;
        out = stack.back();
        stack.pop_back();
        return true;
    };
    auto underflow = [&] { return trap(TrapKind::StackUnderflow, ip, "operand stack empty"); };
    auto retire = [&] {
        s.ip = ip + len;
        ++counters.clock;
        ++s.instr_retired;
        return true;
    };

    switch (static_cast<Op>(raw)) {
        case Op::Halt:
            ++counters.clock;
            ++s.instr_retired;
            s.status = StrStatus::Halted;
            return false;

        case Op::Push: {
            i64 v;
            std::memcpy(&v, code + ip + 1, 8);
            stack.push_back(v);
            return retire();
        }
        case Op::Drop: {
            Cell v;
            if (!pop(v)) return underflow();
            return retire();
        }
        case Op::Dup: {
            if (stack.empty()) return underflow();
            stack.push_back(stack.back());
            return retire();
        }

        case Op::LoadG:
        case Op::StoreG:
        case Op::AddrG: {
            u16 slot;
            std::memcpy(&slot, code + ip + 1, 2);
            if (slot >= ctx.got->size())
                return trap(TrapKind::BadOpcode, ip, "GOT slot " + std::to_string(slot) +
                                                         " out of range");
            const GotEntry& e = (*ctx.got)[slot];
            if (static_cast<Op>(raw) == Op::AddrG) {
                if (!e.is_data)
                    return trap(TrapKind::BadOpcode, ip, "addrg on function slot");
                stack.push_back(static_cast<Cell>(e.addr));
                return retire();
            }
            if (!e.is_data)
                return trap(TrapKind::BadOpcode, ip, "data access on function slot");
            if (static_cast<Op>(raw) == Op::LoadG) {
                stack.push_back(mem.read_cell(e.addr));
            } else {
                Cell v;
                if (!pop(v)) return underflow();
                mem.write_cell(e.addr, v);
            }
            return retire();
        }

        case Op::LoadM:
        case Op::StoreM: {
            Cell addr_c;
            if (!pop(addr_c)) return underflow();
            u64 addr = static_cast<u64>(addr_c);
            if (addr & (kCellSize - 1))
                return trap(TrapKind::MisalignedAddress, addr, "cell access must be 8-aligned");
            const MemRange* r = mem.find_range(addr, kCellSize);
            if (!r) return trap(TrapKind::UnmappedAddress, addr, "");
            if (r->island != s.island)
                return trap(TrapKind::CrossIslandAccess, addr,
                            "owning island " + std::to_string(r->island) + " != string island " +
                                std::to_string(s.island));
            if (static_cast<Op>(raw) == Op::LoadM) {
                stack.push_back(mem.read_cell(addr));
            } else {
                Cell v;
                if (!pop(v)) return underflow();
                mem.write_cell(addr, v);
            }
            return retire();
        }

        case Op::LoadL:
        case Op::StoreL: {
            u16 idx;
            std::memcpy(&idx, code + ip + 1, 2);
            if (s.frames.empty()) return trap(TrapKind::BadLocal, idx, "no live frame");
            Frame& f = s.frames.back();
            if (idx >= f.locals.size())
                return trap(TrapKind::BadLocal, idx, "local " + std::to_string(idx) +
                                                         " >= declared " +
                                                         std::to_string(f.locals.size()));
            if (static_cast<Op>(raw) == Op::LoadL) {
                stack.push_back(f.locals[idx]);
            } else {
                Cell v;
                if (!pop(v)) return underflow();
                f.locals[idx] = v;
            }
            return retire();
        }

        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::DivS:
        case Op::Mod:
        case Op::Eq:
        case Op::Lt:
        case Op::Gt: {
            Cell b, a;
            if (!pop(b) || !pop(a)) return underflow();
            u64 ua = static_cast<u64>(a), ub = static_cast<u64>(b);
            Cell r = 0;
            switch (static_cast<Op>(raw)) {
                case Op::Add: r = static_cast<Cell>(ua + ub); break;
                case Op::Sub: r = static_cast<Cell>(ua - ub); break;
                case Op::Mul: r = static_cast<Cell>(ua * ub); break;
                case Op::DivS:
                case Op::Mod: {
                    if (b == 0) return trap(TrapKind::DivByZero, ip, "");
                    if (a == INT64_MIN && b == -1) {
                        // Wraps like the other arithmetic ops.
                        r = static_cast<Op>(raw) == Op::DivS ? INT64_MIN : 0;
                    } else {
                        r = static_cast<Op>(raw) == Op::DivS ? a / b : a % b;
                    }
                    break;
                }
                case Op::Eq: r = a == b ? 1 : 0; break;
                case Op::Lt: r = a < b ? 1 : 0; break;
                case Op::Gt: r = a > b ? 1 : 0; break;
                default: break;
            }
            stack.push_back(r);
            return retire();
        }

        case Op::Jmp: {
            u32 t;
            std::memcpy(&t, code + ip + 1, 4);
            if (t >= ctx.code_size) return trap(TrapKind::BadOpcode, ip, "jump past code end");
            ++counters.clock;
            ++s.instr_retired;
            s.ip = t;
            return true;
        }
        case Op::Jz: {
            u32 t;
            std::memcpy(&t, code + ip + 1, 4);
            Cell c;
            if (!pop(c)) return underflow();
            if (c == 0) {
                if (t >= ctx.code_size)
                    return trap(TrapKind::BadOpcode, ip, "jump past code end");
                ++counters.clock;
                ++s.instr_retired;
                s.ip = t;
                return true;
            }
            return retire();
        }

        case Op::Call: {
            u16 slot;
            std::memcpy(&slot, code + ip + 1, 2);
            u8 argc = code[ip + 3];
            if (slot >= ctx.got->size())
                return trap(TrapKind::BadOpcode, ip, "GOT slot " + std::to_string(slot) +
                                                         " out of range");
            const GotEntry& e = (*ctx.got)[slot];
            if (e.is_data) return trap(TrapKind::NotAFunction, slot, "call on data slot");
            if (s.frames.size() >= kMaxFrames)
                return trap(TrapKind::StackOverflow, ip, "frame depth limit");
            if (stack.size() < argc) return underflow();

            const ModuleDef& callee = module(e.code_module);
            u32 declared = 0;
            if (auto it = callee.func_locals.find(e.code_offset); it != callee.func_locals.end())
                declared = it->second;
            Frame f;
            f.module = e.code_module;
            f.entry = e.code_offset;
            f.ret_module = s.module;
            f.ret_ip = ip + len;
            f.locals.assign(std::max<u32>(declared, argc), 0);
            for (u32 i = 0; i < argc; ++i) {
                f.locals[argc - 1 - i] = stack.back();
                stack.pop_back();
            }
            s.frames.push_back(std::move(f));
            ++counters.clock;
            ++s.instr_retired;
            s.module = e.code_module;
            s.ip = e.code_offset;
            ctx.refresh(*this, s);
            return true;
        }

        case Op::Ret: {
            u8 retc = code[ip + 1];
            if (stack.size() < retc) return underflow();
            ++counters.clock;
            ++s.instr_retired;
            if (s.frames.size() <= 1) {
                // Returning from the entry frame ends the string.
                s.frames.clear();
                s.status = StrStatus::Halted;
                return false;
            }
            Frame done = std::move(s.frames.back());
            s.frames.pop_back();
            s.module = done.ret_module;
            s.ip = done.ret_ip;
            ctx.refresh(*this, s);
            return true;
        }

        case Op::Alloc: {
            Cell size_c;
            if (!pop(size_c)) return underflow();
            if (size_c <= 0)
                return trap(TrapKind::HeapFault, ip, "ZeroSize");
            u64 addr;
            try {
                addr = halloc(string_node(s), static_cast<u64>(size_c), ctx.cur_bead, s.id,
                              s.island);
            } catch (const Error& e) {
                return trap(TrapKind::HeapFault, ip, e.code());
            }
            stack.push_back(static_cast<Cell>(addr));
            return retire();
        }
        case Op::Free: {
            Cell addr_c;
            if (!pop(addr_c)) return underflow();
            try {
                hfree(static_cast<u64>(addr_c));
            } catch (const Error& e) {
                return trap(TrapKind::HeapFault, static_cast<u64>(addr_c), e.code());
            }
            return retire();
        }
        case Op::Realloc: {
            Cell size_c, addr_c;
            if (!pop(size_c) || !pop(addr_c)) return underflow();
            if (size_c <= 0) return trap(TrapKind::HeapFault, ip, "ZeroSize");
            u64 naddr;
            try {
                naddr = hrealloc(static_cast<u64>(addr_c), static_cast<u64>(size_c));
            } catch (const Error& e) {
                return trap(TrapKind::HeapFault, static_cast<u64>(addr_c), e.code());
            }
            stack.push_back(static_cast<Cell>(naddr));
            return retire();
        }

        case Op::Yield:
            ++counters.clock;
            ++s.instr_retired;
            s.ip = ip + len;
            s.status = StrStatus::Yielded;
            return false;

        case Op::Host: {
            u8 num = code[ip + 1];
            switch (static_cast<HostCall>(num)) {
                case HostCall::PrintInt: {
                    Cell v;
                    if (!pop(v)) return underflow();
                    emit_output(s, std::to_string(v) + "\n");
                    break;
                }
                case HostCall::StringId:
                    stack.push_back(static_cast<Cell>(s.id));
                    break;
                case HostCall::ClockTicks:
                    stack.push_back(static_cast<Cell>(counters.clock));
                    break;
                case HostCall::PrintChar: {
                    Cell v;
                    if (!pop(v)) return underflow();
                    emit_output(s, std::string(1, static_cast<char>(v & 0xff)));
                    break;
                }
                case HostCall::NodeId:
                    stack.push_back(static_cast<Cell>(string_node(s)));
                    break;
                default:
                    return trap(TrapKind::BadOpcode, ip, "host call " + std::to_string(num));
            }
            return retire();
        }
    }
    return trap(TrapKind::BadOpcode, ip, "opcode " + std::to_string(raw));
}

ExecResult Runtime::run_quantum(StringState& s, u64 fuel) {
    if (fuel == 0) fail("InvariantViolation", "fuel must be >= 1");
    if (s.status == StrStatus::Yielded) s.status = StrStatus::Running;
    if (s.status != StrStatus::Running)
        fail("DeadString", "string " + std::to_string(s.id) + " is not runnable");

    ExecCtx ctx;
    ctx.refresh(*this, s);
    u64 consumed = 0;
    while (consumed < fuel) {
        bool cont = exec_one(s, ctx);
        ++consumed;
        if (!cont) {
            RunOutcome o = s.status == StrStatus::Yielded  ? RunOutcome::Yielded
                           : s.status == StrStatus::Halted ? RunOutcome::Halted
                                                           : RunOutcome::Trapped;
            return {o, consumed};
        }
    }
    return {RunOutcome::QuantumExpired, consumed};
}

ExecResult Runtime::step(StringState& s) { return run_quantum(s, 1); }

}  // namespace weaves
