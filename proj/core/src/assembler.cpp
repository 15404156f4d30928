#include <charconv>
#include <map>
#include <sstream>
#include <unordered_map>

#include "weaves/isa.hpp"
#include "weaves/wof.hpp"

namespace weaves::wof {

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ';') break;
        if (c == ' ' || c == '\t' || c == '\r' || c == ',') {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

i64 parse_int(const std::string& tok, int line_no) {
    i64 v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
        fail("SyntaxError", "line " + std::to_string(line_no) + ": bad integer '" + tok + "'");
    return v;
}

void put_u16(std::vector<u8>& code, u16 v) {
    code.push_back(v & 0xff);
    code.push_back(v >> 8);
}

void put_u32(std::vector<u8>& code, u32 v) {
    for (int i = 0; i < 4; ++i) code.push_back((v >> (8 * i)) & 0xff);
}

void put_i64(std::vector<u8>& code, i64 v) {
    u64 u = static_cast<u64>(v);
    for (int i = 0; i < 8; ++i) code.push_back((u >> (8 * i)) & 0xff);
}

}  // namespace

ObjectModule assemble(const std::string& text, const std::string& name) {
    ObjectModule m;
    m.name = name;

    struct Fixup {
        u32 at;            // code offset of the u32 operand
        std::string label;
        int line;
    };
    struct SlotRef {
        u32 at;            // code offset of the u16 slot operand
        std::string symbol;
        int line;
    };
    std::vector<Fixup> fixups;
    std::vector<SlotRef> slot_refs;
    std::unordered_map<std::string, u32> labels;  // per current function
    std::vector<std::pair<std::string, int>> pending_label_uses;

    bool in_func = false;
    int func_symbol = -1;
    int line_no = 0;
    std::istringstream in(text);
    std::string line;

    auto define_symbol = [&](const std::string& n, SymbolKind kind, u32 offset, u32 size,
                             bool tuple) {
        for (auto& s : m.symbols)
            if (s.name == n) fail("RedefinedSymbol", n);
        for (auto& i : m.imports)
            if (i == n) fail("RedefinedSymbol", n + " (already imported)");
        m.symbols.push_back({n, kind, offset, size, /*exported=*/true, tuple});
        return static_cast<int>(m.symbols.size() - 1);
    };

    auto data_directive = [&](const std::vector<std::string>& tok, bool tuple) {
        if (tok.size() < 3)
            fail("SyntaxError", "line " + std::to_string(line_no) + ": expected NAME SIZE");
        u32 size = static_cast<u32>(parse_int(tok[2], line_no));
        if (size == 0 || size % kCellSize != 0)
            fail("SyntaxError", "line " + std::to_string(line_no) + ": size " + tok[2] +
                                    " must be a positive multiple of " + std::to_string(kCellSize));
        u32 offset = static_cast<u32>(m.data_template.size());
        define_symbol(tok[1], SymbolKind::Data, offset, size, tuple);
        std::vector<u8> cells(size, 0);
        size_t idx = 3;
        if (idx < tok.size()) {
            if (tok[idx] != "=")
                fail("SyntaxError", "line " + std::to_string(line_no) + ": expected '='");
            ++idx;
            u32 cell = 0;
            for (; idx < tok.size(); ++idx, ++cell) {
                if (cell * kCellSize >= size)
                    fail("SyntaxError", "line " + std::to_string(line_no) +
                                            ": more initializers than cells");
                i64 v = parse_int(tok[idx], line_no);
                std::memcpy(cells.data() + cell * kCellSize, &v, 8);
            }
        }
        m.data_template.insert(m.data_template.end(), cells.begin(), cells.end());
    };

    while (std::getline(in, line)) {
        ++line_no;
        auto tok = tokenize(line);
        if (tok.empty()) continue;
        const std::string& head = tok[0];

        if (head == ".data" || head == ".tuple") {
            if (in_func)
                fail("SyntaxError", "line " + std::to_string(line_no) + ": directive inside func");
            data_directive(tok, head == ".tuple");
            continue;
        }
        if (head == ".import") {
            if (tok.size() != 2)
                fail("SyntaxError", "line " + std::to_string(line_no) + ": expected .import NAME");
            for (auto& s : m.symbols)
                if (s.name == tok[1]) fail("RedefinedSymbol", tok[1]);
            for (auto& i : m.imports)
                if (i == tok[1]) fail("RedefinedSymbol", tok[1] + " (duplicate import)");
            m.imports.push_back(tok[1]);
            continue;
        }
        if (head == "func") {
            if (in_func)
                fail("SyntaxError", "line " + std::to_string(line_no) + ": nested func");
            if (tok.size() != 2 || tok[1].empty() || tok[1].back() != ':')
                fail("SyntaxError", "line " + std::to_string(line_no) + ": expected func NAME:");
            std::string fname = tok[1].substr(0, tok[1].size() - 1);
            func_symbol = define_symbol(fname, SymbolKind::Function,
                                        static_cast<u32>(m.code.size()), 0, false);
            in_func = true;
            labels.clear();
            continue;
        }
        if (head == ".locals") {
            if (!in_func || tok.size() != 2)
                fail("SyntaxError", "line " + std::to_string(line_no) + ": .locals N inside func");
            m.symbols[func_symbol].size = static_cast<u32>(parse_int(tok[1], line_no));
            continue;
        }
        if (head == "end") {
            if (!in_func)
                fail("SyntaxError", "line " + std::to_string(line_no) + ": end outside func");
            // Resolve intra-function label fixups.
            for (auto it = fixups.begin(); it != fixups.end();) {
                auto found = labels.find(it->label);
                if (found == labels.end()) {
                    ++it;
                    continue;
                }
                u32 target = found->second;
                std::memcpy(m.code.data() + it->at, &target, 4);
                it = fixups.erase(it);
            }
            for (auto& f : fixups) fail("UndefinedLabel", f.label);
            in_func = false;
            continue;
        }
        if (!in_func) {
            // A bare "name:" outside func is not part of the grammar.
            fail("SyntaxError", "line " + std::to_string(line_no) + ": '" + head +
                                    "' outside a function body");
        }
        if (head.size() > 1 && head.back() == ':' && tok.size() == 1) {
            std::string label = head.substr(0, head.size() - 1);
            if (!labels.emplace(label, static_cast<u32>(m.code.size())).second)
                fail("RedefinedSymbol", "label " + label);
            continue;
        }

        auto op = mnemonic_to_op(head);
        if (!op) fail("UnknownMnemonic", "line " + std::to_string(line_no) + ": '" + head + "'");
        auto need = [&](size_t n) {
            if (tok.size() != n + 1)
                fail("SyntaxError", "line " + std::to_string(line_no) + ": " + head + " takes " +
                                        std::to_string(n) + " operand(s)");
        };
        m.code.push_back(static_cast<u8>(*op));
        switch (*op) {
            case Op::Push:
                need(1);
                put_i64(m.code, parse_int(tok[1], line_no));
                break;
            case Op::LoadG:
            case Op::StoreG:
            case Op::AddrG:
                need(1);
                slot_refs.push_back({static_cast<u32>(m.code.size()), tok[1], line_no});
                put_u16(m.code, 0);
                break;
            case Op::LoadL:
            case Op::StoreL:
                need(1);
                put_u16(m.code, static_cast<u16>(parse_int(tok[1], line_no)));
                break;
            case Op::Jmp:
            case Op::Jz:
                need(1);
                fixups.push_back({static_cast<u32>(m.code.size()), tok[1], line_no});
                put_u32(m.code, 0);
                break;
            case Op::Call:
                need(2);
                slot_refs.push_back({static_cast<u32>(m.code.size()), tok[1], line_no});
                put_u16(m.code, 0);
                m.code.push_back(static_cast<u8>(parse_int(tok[2], line_no)));
                break;
            case Op::Ret:
                need(1);
                m.code.push_back(static_cast<u8>(parse_int(tok[1], line_no)));
                break;
            case Op::Host: {
                need(1);
                auto h = host_call_by_name(tok[1]);
                u8 num = h ? static_cast<u8>(*h) : static_cast<u8>(parse_int(tok[1], line_no));
                m.code.push_back(num);
                break;
            }
            default:
                need(0);
                break;
        }
    }
    if (in_func) fail("SyntaxError", "line " + std::to_string(line_no) + ": missing end");

    // Symbol/import names are all known now; patch GOT slot operands.
    for (auto& ref : slot_refs) {
        int slot = m.slot_of(ref.symbol);
        if (slot < 0) fail("UndefinedLabel", ref.symbol);
        u16 s = static_cast<u16>(slot);
        std::memcpy(m.code.data() + ref.at, &s, 2);
    }
    return m;
}

std::string disassemble(const ObjectModule& m) {
    std::ostringstream out;
    out << "; module " << (m.name.empty() ? "(unnamed)" : m.name) << "\n";

    auto emit_data = [&](const SymbolEntry& s) {
        out << (s.tuple_member ? ".tuple " : ".data ") << s.name << " " << s.size;
        // Initializer cells, zero tail omitted.
        u32 cells = s.size / kCellSize;
        u32 last_nonzero = 0;
        std::vector<i64> vals(cells, 0);
        for (u32 c = 0; c < cells; ++c) {
            std::memcpy(&vals[c], m.data_template.data() + s.offset + c * kCellSize, 8);
            if (vals[c] != 0) last_nonzero = c + 1;
        }
        if (last_nonzero > 0) {
            out << " =";
            for (u32 c = 0; c < last_nonzero; ++c) out << " " << vals[c];
        }
        out << "\n";
    };

    // Function bodies are delimited by the next function offset in code order.
    std::vector<const SymbolEntry*> funcs;
    for (auto& s : m.symbols)
        if (s.kind == SymbolKind::Function) funcs.push_back(&s);
    std::sort(funcs.begin(), funcs.end(),
              [](auto* a, auto* b) { return a->offset < b->offset; });
    auto body_end = [&](const SymbolEntry& f) -> u32 {
        for (size_t i = 0; i < funcs.size(); ++i)
            if (funcs[i] == &f)
                return i + 1 < funcs.size() ? funcs[i + 1]->offset
                                            : static_cast<u32>(m.code.size());
        return static_cast<u32>(m.code.size());
    };

    auto slot_name = [&](u16 slot) -> std::string {
        if (slot < m.symbols.size()) return m.symbols[slot].name;
        u32 imp = slot - static_cast<u32>(m.symbols.size());
        if (imp < m.imports.size()) return m.imports[imp];
        return std::to_string(slot);  // dangling; validate flags it
    };

    for (auto& i : m.imports) out << ".import " << i << "\n";

    // Emission follows symbol-table order so round-tripping preserves slots.
    for (auto& sym : m.symbols) {
        if (sym.kind == SymbolKind::Data) {
            emit_data(sym);
            continue;
        }
        const auto& f = sym;
        u32 end = body_end(f);
        out << "func " << f.name << ":\n";
        if (f.size > 0) out << ".locals " << f.size << "\n";

        // Collect jump targets for label synthesis.
        std::map<u32, std::string> target_labels;
        for (u32 off = f.offset; off < end;) {
            auto d = decode_insn(m.code, off);
            if (!d) fail("InvariantViolation", "undecodable code at offset " + std::to_string(off));
            if (d->op == Op::Jmp || d->op == Op::Jz) target_labels.emplace(d->target, "");
            off += d->length;
        }
        int n = 0;
        for (auto& [off, label] : target_labels)
            label = "L" + std::to_string(n++);

        for (u32 off = f.offset; off < end;) {
            auto d = *decode_insn(m.code, off);
            if (auto it = target_labels.find(off); it != target_labels.end())
                out << it->second << ":\n";
            out << "  " << op_mnemonic(d.op);
            switch (d.op) {
                case Op::Push: out << " " << d.imm; break;
                case Op::LoadG:
                case Op::StoreG:
                case Op::AddrG: out << " " << slot_name(d.slot); break;
                case Op::LoadL:
                case Op::StoreL: out << " " << d.slot; break;
                case Op::Jmp:
                case Op::Jz: out << " " << target_labels[d.target]; break;
                case Op::Call: out << " " << slot_name(d.slot) << " " << int(d.count); break;
                case Op::Ret: out << " " << int(d.count); break;
                case Op::Host: out << " " << host_call_name(static_cast<HostCall>(d.count)); break;
                default: break;
            }
            out << "\n";
            off += d.length;
        }
        out << "end\n";
    }
    return out.str();
}

}  // namespace weaves::wof
