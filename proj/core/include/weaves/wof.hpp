#pragma once

#include <span>
#include <string>
#include <vector>

#include "weaves/common.hpp"

namespace weaves::wof {

// Weave Object Format: a position-independent module container.
//
// Layout (little-endian throughout):
//   magic "WOF1"
//   u32 version (=1), u32 code_len, u32 data_len,
//   u32 symbol_count, u32 import_count, u32 name_blob_len   -- 28-byte header
//   code bytes, data_template bytes, symbol records, import records, name blob
//
// Symbol record (16 bytes): u32 name_off, u16 name_len, u8 kind (0=data,
// 1=function), u8 flags (bit0 exported, bit1 tuple_member), u32 offset,
// u32 size.
// Import record (8 bytes): u32 name_off, u16 name_len, u16 reserved (=0).
//
// GOT slot numbering is total and gap-free: slots 0..symbols-1 are own
// symbols in table order, followed by imports in table order.

inline constexpr char kMagic[4] = {'W', 'O', 'F', '1'};
inline constexpr u32 kVersion = 1;
inline constexpr u32 kHeaderSize = 28;

enum class SymbolKind : u8 { Data = 0, Function = 1 };

struct SymbolEntry {
    std::string name;
    SymbolKind kind = SymbolKind::Data;
    u32 offset = 0;  // bytes into data_template (data) or code (function)
    u32 size = 0;    // data: byte size (cell multiple); function: declared locals count
    bool exported = true;
    bool tuple_member = false;

    bool operator==(const SymbolEntry&) const = default;
};

struct ObjectModule {
    std::string name;  // assigned by the loader, not serialized
    std::vector<u8> code;
    std::vector<u8> data_template;
    std::vector<SymbolEntry> symbols;
    std::vector<std::string> imports;

    u32 slot_count() const { return static_cast<u32>(symbols.size() + imports.size()); }
    // Slot index for a name, own symbols first then imports. -1 if absent.
    int slot_of(const std::string& n) const;
    const SymbolEntry* find_symbol(const std::string& n) const;

    // Structural equality ignores the loader-assigned name.
    bool same_contents(const ObjectModule& o) const {
        return code == o.code && data_template == o.data_template && symbols == o.symbols &&
               imports == o.imports;
    }
};

struct ValidationIssue {
    std::string code;     // e.g. "dangling GOT slot"
    std::string message;  // human detail with the offending offset/symbol
    u64 location = 0;     // byte offset or symbol index, per code
};

/// Parse a WOF byte image. Throws Error with codes BadMagic, TruncatedSection,
/// OverlappingSymbol, DuplicateName. The returned module satisfies all format
/// invariants enforceable without decoding code (see validate_object).
ObjectModule parse_object(std::span<const u8> bytes, const std::string& name = "");

/// Canonical serialization: fixed field order, sequential name blob. Throws
/// InvariantViolation if the module breaks format invariants.
std::vector<u8> serialize_object(const ObjectModule& m);

/// Deep diagnostics: decodes the instruction stream, checks function offsets
/// against instruction boundaries, jump targets, GOT slot operands, local
/// indices against declared counts. Empty report iff loadable.
std::vector<ValidationIssue> validate_object(const ObjectModule& m);

/// Assemble the line-oriented source grammar:
///   .data NAME SIZE [= INT...]      .tuple NAME SIZE [= INT...]
///   .import NAME                    func NAME: ... end
///   .locals N (inside func)         LABEL:   ; comment
/// Throws UnknownMnemonic, UndefinedLabel, RedefinedSymbol, SyntaxError.
ObjectModule assemble(const std::string& text, const std::string& name = "asm");

/// Text form that assembles back to a structurally equal module.
std::string disassemble(const ObjectModule& m);

}  // namespace weaves::wof
