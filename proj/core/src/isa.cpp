#include "weaves/isa.hpp"

#include <cstring>

namespace weaves {

u32 insn_length(u8 opcode) {
    switch (static_cast<Op>(opcode)) {
        case Op::Halt:
        case Op::Drop:
        case Op::Dup:
        case Op::LoadM:
        case Op::StoreM:
        case Op::Add:
        case Op::Sub:
        case Op::Mul:
        case Op::DivS:
        case Op::Mod:
        case Op::Eq:
        case Op::Lt:
        case Op::Gt:
        case Op::Alloc:
        case Op::Free:
        case Op::Realloc:
        case Op::Yield:
            return 1;
        case Op::Push:
            return 9;
        case Op::LoadG:
        case Op::StoreG:
        case Op::AddrG:
        case Op::LoadL:
        case Op::StoreL:
            return 3;
        case Op::Jmp:
        case Op::Jz:
            return 5;
        case Op::Call:
            return 4;
        case Op::Ret:
        case Op::Host:
            return 2;
    }
    return 0;
}

std::optional<DecodedInsn> decode_insn(std::span<const u8> code, u32 offset) {
    if (offset >= code.size()) return std::nullopt;
    u8 opcode = code[offset];
    u32 len = insn_length(opcode);
    if (len == 0 || offset + len > code.size()) return std::nullopt;

    DecodedInsn d;
    d.op = static_cast<Op>(opcode);
    d.length = len;
    const u8* p = code.data() + offset + 1;
    switch (d.op) {
        case Op::Push:
            std::memcpy(&d.imm, p, 8);
            break;
        case Op::LoadG:
        case Op::StoreG:
        case Op::AddrG:
        case Op::LoadL:
        case Op::StoreL:
            std::memcpy(&d.slot, p, 2);
            break;
        case Op::Jmp:
        case Op::Jz:
            std::memcpy(&d.target, p, 4);
            break;
        case Op::Call:
            std::memcpy(&d.slot, p, 2);
            d.count = p[2];
            break;
        case Op::Ret:
        case Op::Host:
            d.count = p[0];
            break;
        default:
            break;
    }
    return d;
}

std::optional<std::set<u32>> instruction_boundaries(std::span<const u8> code) {
    std::set<u32> out;
    u32 off = 0;
    out.insert(0);
    while (off < code.size()) {
        auto d = decode_insn(code, off);
        if (!d) return std::nullopt;
        off += d->length;
        out.insert(off);
    }
    return out;
}

const char* op_mnemonic(Op op) {
    switch (op) {
        case Op::Halt: return "halt";
        case Op::Push: return "push";
        case Op::Drop: return "drop";
        case Op::Dup: return "dup";
        case Op::LoadG: return "loadg";
        case Op::StoreG: return "storeg";
        case Op::AddrG: return "addrg";
        case Op::LoadM: return "loadm";
        case Op::StoreM: return "storem";
        case Op::LoadL: return "loadl";
        case Op::StoreL: return "storel";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::DivS: return "divs";
        case Op::Mod: return "mod";
        case Op::Eq: return "eq";
        case Op::Lt: return "lt";
        case Op::Gt: return "gt";
        case Op::Jmp: return "jmp";
        case Op::Jz: return "jz";
        case Op::Call: return "call";
        case Op::Ret: return "ret";
        case Op::Alloc: return "alloc";
        case Op::Free: return "free";
        case Op::Realloc: return "realloc";
        case Op::Yield: return "yield";
        case Op::Host: return "host";
    }
    return "?";
}

const char* host_call_name(HostCall h) {
    switch (h) {
        case HostCall::PrintInt: return "print_int";
        case HostCall::StringId: return "string_id";
        case HostCall::ClockTicks: return "clock_ticks";
        case HostCall::PrintChar: return "print_char";
        case HostCall::NodeId: return "node_id";
    }
    return "?";
}

std::optional<Op> mnemonic_to_op(const std::string& word) {
    static const std::pair<const char*, Op> table[] = {
        {"halt", Op::Halt},   {"push", Op::Push},       {"drop", Op::Drop},
        {"dup", Op::Dup},     {"loadg", Op::LoadG},     {"storeg", Op::StoreG},
        {"addrg", Op::AddrG}, {"loadm", Op::LoadM},     {"storem", Op::StoreM},
        {"loadl", Op::LoadL}, {"storel", Op::StoreL},   {"add", Op::Add},
        {"sub", Op::Sub},     {"mul", Op::Mul},         {"divs", Op::DivS},
        {"mod", Op::Mod},     {"eq", Op::Eq},           {"lt", Op::Lt},
        {"gt", Op::Gt},       {"jmp", Op::Jmp},         {"jz", Op::Jz},
        {"call", Op::Call},   {"ret", Op::Ret},         {"alloc", Op::Alloc},
        {"free", Op::Free},   {"realloc", Op::Realloc}, {"yield", Op::Yield},
        {"host", Op::Host},
    };
    for (auto& [m, op] : table)
        if (word == m) return op;
    return std::nullopt;
}

std::optional<HostCall> host_call_by_name(const std::string& word) {
    static const std::pair<const char*, HostCall> table[] = {
        {"print_int", HostCall::PrintInt},   {"string_id", HostCall::StringId},
        {"clock_ticks", HostCall::ClockTicks}, {"print_char", HostCall::PrintChar},
        {"node_id", HostCall::NodeId},
    };
    for (auto& [m, h] : table)
        if (word == m) return h;
    return std::nullopt;
}

}  // namespace weaves
