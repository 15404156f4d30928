#include "weaves/wof.hpp"

#include <algorithm>
#include <cstring>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "weaves/isa.hpp"

namespace weaves::wof {

int ObjectModule::slot_of(const std::string& n) const {
    for (size_t i = 0; i < symbols.size(); ++i)
        if (symbols[i].name == n) return static_cast<int>(i);
    for (size_t i = 0; i < imports.size(); ++i)
        if (imports[i] == n) return static_cast<int>(symbols.size() + i);
    return -1;
}

const SymbolEntry* ObjectModule::find_symbol(const std::string& n) const {
    for (auto& s : symbols)
        if (s.name == n) return &s;
    return nullptr;
}

namespace {

void check_invariants(const ObjectModule& m) {
    std::unordered_set<std::string> names;
    std::unordered_set<std::string> exported;
    for (size_t i = 0; i < m.symbols.size(); ++i) {
        const auto& s = m.symbols[i];
        if (!names.insert(s.name).second)
            fail("DuplicateName", "symbol '" + s.name + "' (index " + std::to_string(i) + ")");
        if (s.exported) exported.insert(s.name);
        if (s.kind == SymbolKind::Data) {
            if (s.size < 1)
                fail("InvariantViolation", "data symbol '" + s.name + "' has size 0");
            if (s.size % kCellSize != 0)
                fail("InvariantViolation", "data symbol '" + s.name + "' size " + std::to_string(s.size) +
                                     " not cell-aligned");
            u64 end = u64(s.offset) + s.size;
            if (end > m.data_template.size())
                fail("OverlappingSymbol", "data symbol '" + s.name + "' [" +
                                              std::to_string(s.offset) + ", " +
                                              std::to_string(end) + ") exceeds template length " +
                                              std::to_string(m.data_template.size()));
        } else {
            if (s.offset > m.code.size())
                fail("OverlappingSymbol",
                     "function symbol '" + s.name + "' offset " + std::to_string(s.offset) +
                         " exceeds code length " + std::to_string(m.code.size()));
            if (s.tuple_member)
                fail("InvariantViolation", "function symbol '" + s.name + "' marked tuple_member");
        }
    }
    std::unordered_set<std::string> imps;
    for (auto& imp : m.imports) {
        if (!imps.insert(imp).second)
            fail("DuplicateName", "import '" + imp + "'");
        if (exported.count(imp))
            fail("DuplicateName", "import '" + imp + "' collides with exported symbol");
    }
}

}  // namespace

ObjectModule parse_object(std::span<const u8> bytes, const std::string& name) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail("BadMagic", "missing WOF1 magic at offset 0");
    ByteReader r(bytes.subspan(4));
    u32 version = r.u32v();
    if (version != kVersion)
        fail("BadMagic", "unsupported version " + std::to_string(version));
    u32 code_len = r.u32v();
    u32 data_len = r.u32v();
    u32 symbol_count = r.u32v();
    u32 import_count = r.u32v();
    u32 name_blob_len = r.u32v();

    ObjectModule m;
    m.name = name;
    auto code = r.bytes(code_len);
    m.code.assign(code.begin(), code.end());
    auto data = r.bytes(data_len);
    m.data_template.assign(data.begin(), data.end());

    struct RawName {
        u32 off;
        u16 len;
    };
    std::vector<RawName> sym_names(symbol_count);
    m.symbols.resize(symbol_count);
    for (u32 i = 0; i < symbol_count; ++i) {
        auto& s = m.symbols[i];
        sym_names[i].off = r.u32v();
        sym_names[i].len = r.u16v();
        u8 kind = r.u8v();
        if (kind > 1)
            fail("InvariantViolation", "symbol " + std::to_string(i) + " has unknown kind " +
                                           std::to_string(kind));
        s.kind = static_cast<SymbolKind>(kind);
        u8 flags = r.u8v();
        s.exported = flags & 1;
        s.tuple_member = flags & 2;
        s.offset = r.u32v();
        s.size = r.u32v();
    }
    std::vector<RawName> imp_names(import_count);
    for (u32 i = 0; i < import_count; ++i) {
        imp_names[i].off = r.u32v();
        imp_names[i].len = r.u16v();
        r.u16v();  // reserved
    }
    auto blob = r.bytes(name_blob_len);
    if (!r.done())
        fail("TruncatedSection",
             std::to_string(r.remaining()) + " trailing bytes after name blob");

    auto pick_name = [&](RawName rn, const char* what, u32 idx) {
        if (u64(rn.off) + rn.len > blob.size())
            fail("TruncatedSection", std::string(what) + " " + std::to_string(idx) +
                                         " name range exceeds name blob");
        return std::string(blob.begin() + rn.off, blob.begin() + rn.off + rn.len);
    };
    for (u32 i = 0; i < symbol_count; ++i) m.symbols[i].name = pick_name(sym_names[i], "symbol", i);
    m.imports.resize(import_count);
    for (u32 i = 0; i < import_count; ++i) m.imports[i] = pick_name(imp_names[i], "import", i);

    check_invariants(m);
    return m;
}

std::vector<u8> serialize_object(const ObjectModule& m) {
    check_invariants(m);

    std::string blob;
    std::vector<std::pair<u32, u16>> sym_names, imp_names;
    auto append_name = [&](const std::string& n) {
        if (n.size() > 0xFFFF) fail("InvariantViolation", "name too long: " + n);
        std::pair<u32, u16> loc{static_cast<u32>(blob.size()), static_cast<u16>(n.size())};
        blob += n;
        return loc;
    };
    for (auto& s : m.symbols) sym_names.push_back(append_name(s.name));
    for (auto& i : m.imports) imp_names.push_back(append_name(i));

    ByteWriter w;
    w.bytes(std::span<const u8>(reinterpret_cast<const u8*>(kMagic), 4));
    w.u32v(kVersion);
    w.u32v(static_cast<u32>(m.code.size()));
    w.u32v(static_cast<u32>(m.data_template.size()));
    w.u32v(static_cast<u32>(m.symbols.size()));
    w.u32v(static_cast<u32>(m.imports.size()));
    w.u32v(static_cast<u32>(blob.size()));
    w.bytes(m.code);
    w.bytes(m.data_template);
    for (size_t i = 0; i < m.symbols.size(); ++i) {
        const auto& s = m.symbols[i];
        w.u32v(sym_names[i].first);
        w.u16v(sym_names[i].second);
        w.u8v(static_cast<u8>(s.kind));
        w.u8v(static_cast<u8>((s.exported ? 1 : 0) | (s.tuple_member ? 2 : 0)));
        w.u32v(s.offset);
        w.u32v(s.size);
    }
    for (size_t i = 0; i < m.imports.size(); ++i) {
        w.u32v(imp_names[i].first);
        w.u16v(imp_names[i].second);
        w.u16v(0);
    }
    w.bytes(std::span<const u8>(reinterpret_cast<const u8*>(blob.data()), blob.size()));
    return w.take();
}

std::vector<ValidationIssue> validate_object(const ObjectModule& m) {
    std::vector<ValidationIssue> issues;
    auto issue = [&](std::string code, std::string msg, u64 loc) {
        issues.push_back({std::move(code), std::move(msg), loc});
    };

    // Structural invariants, reported rather than thrown.
    std::unordered_set<std::string> names;
    for (size_t i = 0; i < m.symbols.size(); ++i) {
        const auto& s = m.symbols[i];
        if (!names.insert(s.name).second)
            issue("duplicate name", "symbol '" + s.name + "'", i);
        if (s.kind == SymbolKind::Data) {
            if (s.size < 1 || s.size % kCellSize != 0)
                issue("bad symbol size", "data symbol '" + s.name + "' size " +
                                             std::to_string(s.size), i);
            if (u64(s.offset) + s.size > m.data_template.size())
                issue("overlapping symbol",
                      "data symbol '" + s.name + "' exceeds template", i);
        }
    }
    for (auto& imp : m.imports) {
        if (names.count(imp)) issue("duplicate name", "import '" + imp + "'", 0);
    }

    auto bounds = instruction_boundaries(m.code);
    if (!bounds) {
        // Locate the failure point for the report.
        u32 off = 0;
        while (off < m.code.size()) {
            auto d = decode_insn(m.code, off);
            if (!d) break;
            off += d->length;
        }
        u32 rest = static_cast<u32>(m.code.size()) - off;
        if (off < m.code.size() && insn_length(m.code[off]) == 0)
            issue("bad opcode", "opcode 0x" + std::to_string(m.code[off]) + " at offset " +
                                    std::to_string(off), off);
        else
            issue("truncated instruction",
                  "instruction stream ends mid-operand at offset " + std::to_string(off) +
                      " (" + std::to_string(rest) + " bytes left)", off);
        return issues;  // downstream checks need a decodable stream
    }

    for (size_t i = 0; i < m.symbols.size(); ++i) {
        const auto& s = m.symbols[i];
        if (s.kind == SymbolKind::Function && !bounds->count(s.offset))
            issue("function offset not on instruction boundary",
                  "function '" + s.name + "' at offset " + std::to_string(s.offset), s.offset);
    }

    u32 slots = m.slot_count();
    u32 off = 0;
    while (off < m.code.size()) {
        auto d = *decode_insn(m.code, off);
        switch (d.op) {
            case Op::LoadG:
            case Op::StoreG:
            case Op::AddrG:
            case Op::Call:
                if (d.slot >= slots)
                    issue("dangling GOT slot",
                          std::string(op_mnemonic(d.op)) + " slot " + std::to_string(d.slot) +
                              " >= slot count " + std::to_string(slots) + " at offset " +
                              std::to_string(off), off);
                break;
            case Op::Jmp:
            case Op::Jz:
                if (!bounds->count(d.target) || d.target >= m.code.size())
                    issue("bad jump target",
                          std::string(op_mnemonic(d.op)) + " to " + std::to_string(d.target) +
                              " at offset " + std::to_string(off), off);
                break;
            case Op::Host:
                if (d.count > static_cast<u8>(HostCall::NodeId))
                    issue("bad host call", "host " + std::to_string(d.count) + " at offset " +
                                               std::to_string(off), off);
                break;
            default:
                break;
        }
        off += d.length;
    }
    return issues;
}

}  // namespace weaves::wof
