#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>

#include "weaves/common.hpp"

namespace weaves {

// Stack machine instruction set. One opcode byte, operands little-endian.
// Global data is reachable only through the GOT-indexed opcodes
// (LOADG/STOREG/ADDRG); LOADM/STOREM take explicit cell addresses.
enum class Op : u8 {
    Halt = 0x00,
    Push = 0x01,   // i64 literal
    Drop = 0x02,
    Dup = 0x03,
    LoadG = 0x10,  // u16 GOT slot
    StoreG = 0x11, // u16 GOT slot
    AddrG = 0x12,  // u16 GOT slot
    LoadM = 0x13,
    StoreM = 0x14,
    LoadL = 0x20,  // u16 local index
    StoreL = 0x21, // u16 local index
    Add = 0x30,
    Sub = 0x31,
    Mul = 0x32,
    DivS = 0x33,
    Mod = 0x34,
    Eq = 0x38,
    Lt = 0x39,
    Gt = 0x3A,
    Jmp = 0x40,    // u32 code offset
    Jz = 0x41,     // u32 code offset
    Call = 0x50,   // u16 GOT slot, u8 argc
    Ret = 0x51,    // u8 retc
    Alloc = 0x60,
    Free = 0x61,
    Realloc = 0x62,
    Yield = 0x70,
    Host = 0x71,   // u8 host call number
};

enum class HostCall : u8 {
    PrintInt = 0,
    StringId = 1,
    ClockTicks = 2,
    PrintChar = 3,
    NodeId = 4,
};

struct DecodedInsn {
    Op op;
    i64 imm = 0;     // Push
    u16 slot = 0;    // LoadG/StoreG/AddrG/Call/LoadL/StoreL
    u32 target = 0;  // Jmp/Jz
    u8 count = 0;    // Call argc, Ret retc, Host number
    u32 length = 0;  // total encoded bytes
};

/// Encoded length for an opcode, or 0 if the byte is not an opcode.
u32 insn_length(u8 opcode);

/// Decode one instruction at `offset`. nullopt if the opcode is unknown or
/// the stream ends mid-operand.
std::optional<DecodedInsn> decode_insn(std::span<const u8> code, u32 offset);

/// Offsets that start an instruction under linear decode from 0. Empty code
/// yields {0}. nullopt if decode fails anywhere (bad opcode / truncation).
std::optional<std::set<u32>> instruction_boundaries(std::span<const u8> code);

const char* op_mnemonic(Op op);
const char* host_call_name(HostCall h);
std::optional<Op> mnemonic_to_op(const std::string& word);
std::optional<HostCall> host_call_by_name(const std::string& word);

}  // namespace weaves
