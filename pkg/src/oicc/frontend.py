"""Mini source language: lexer, recursive-descent parser, static checks.

Grammar (EBNF):

    program := "vars" decl ("," decl)* ";"
               ("in" name ("," name)* ";")?
               ("out" name ("," name)* ";")?
               stmt*
    decl    := name | name "[" number "]"
    stmt    := lvalue "=" expr ";"
             | "if" "(" cond ")" block ("else" block)?
             | "while" "(" cond ")" block
    block   := "{" stmt* "}"
    expr    := term (("+" | "-") term)*
    term    := number | lvalue
    lvalue  := name | name "[" expr "]"
    cond    := expr ("<" | "<=" | ">" | ">=" | "==" | "!=") expr

Identifiers are ``[A-Za-z_][A-Za-z0-9_]*``.  Numbers are decimal or 0x-hex,
optionally preceded by a unary minus which is folded modulo 2**32.  ``#``
starts a comment running to end of line.  Source files use extension
``.min``.

Static checks reject undeclared or duplicate names (E_UNDECL, E_DUP),
reads of scalars not written on every path (E_UNINIT, conservative:
a write in only one branch of an ``if`` does not count afterwards, nor
does a write inside a ``while`` body), out-of-range constant array
indices (E_BOUNDS), arrays in in/out lists (E_IOKIND), mixed-up
scalar/array usage (E_KIND) and expressions nested deeper than 64
(E_DEPTH).  Dynamic index violations are left to the runtime dispatch
default, which aborts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from .isa import MASK32

MAX_ARRAY_SIZE = 256
MAX_EXPR_DEPTH = 64

KEYWORDS = {"vars", "in", "out", "if", "else", "while"}
RELOPS = ("<=", ">=", "==", "!=", "<", ">")
PUNCT = ("<=", ">=", "==", "!=", "<", ">", "+", "-", "=", ",", ";", "[", "]", "{", "}", "(", ")")


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int, expected: tuple[str, ...] = (), found: str = ""):
        self.line = line
        self.col = col
        self.expected = tuple(sorted(expected))
        self.found = found
        detail = message
        if expected:
            detail += f" (expected {', '.join(self.expected)}; found {found!r})"
        super().__init__(f"{line}:{col}: {detail}")


@dataclass
class SemanticError:
    code: str
    message: str
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.code}: {self.message}"


class SemanticErrors(Exception):
    def __init__(self, errors: list[SemanticError]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass
class Node:
    line: int
    col: int


@dataclass
class Const(Node):
    value: int


@dataclass
class Var(Node):
    name: str


@dataclass
class Index(Node):
    name: str
    index: "Expr"


Expr = Union[Const, Var, Index, "Add", "Sub"]
LValue = Union[Var, Index]


@dataclass
class Add(Node):
    left: Expr
    right: Expr


@dataclass
class Sub(Node):
    left: Expr
    right: Expr


@dataclass
class Cond(Node):
    op: str
    left: Expr
    right: Expr


@dataclass
class Assign(Node):
    lhs: LValue
    rhs: Expr


@dataclass
class If(Node):
    cond: Cond
    then_body: list["Stmt"]
    else_body: list["Stmt"]


@dataclass
class While(Node):
    cond: Cond
    body: list["Stmt"]


Stmt = Union[Assign, If, While]


@dataclass
class Decl(Node):
    name: str
    size: Optional[int]  # None for scalars


@dataclass
class Program(Node):
    decls: list[Decl]
    in_list: list[tuple[str, int, int]]
    out_list: list[tuple[str, int, int]]
    body: list[Stmt]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

@dataclass
class Token:
    kind: str  # "ident" | "number" | "punct" | "eof"
    value: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(Token("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            if text[i : i + 2].lower() == "0x":
                j = i + 2
                while j < n and text[j] in "0123456789abcdefABCDEF":
                    j += 1
                if j == i + 2:
                    raise ParseError("malformed hex literal", line, col)
            else:
                while j < n and text[j].isdigit():
                    j += 1
            toks.append(Token("number", text[i:j], line, col))
            col += j - i
            i = j
            continue
        two = text[i : i + 2]
        if two in PUNCT:
            toks.append(Token("punct", two, line, col))
            i += 2
            col += 2
            continue
        if c in PUNCT:
            toks.append(Token("punct", c, line, col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.toks[self.pos]

    def advance(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def error(self, expected: tuple[str, ...]) -> ParseError:
        t = self.peek()
        found = t.value if t.kind != "eof" else "end of input"
        return ParseError("syntax error", t.line, t.col, expected=expected, found=found)

    def expect_punct(self, value: str) -> Token:
        t = self.peek()
        if t.kind == "punct" and t.value == value:
            return self.advance()
        raise self.error((f"'{value}'",))

    def expect_keyword(self, word: str) -> Token:
        t = self.peek()
        if t.kind == "ident" and t.value == word:
            return self.advance()
        raise self.error((f"'{word}'",))

    def expect_name(self) -> Token:
        t = self.peek()
        if t.kind == "ident" and t.value not in KEYWORDS:
            return self.advance()
        raise self.error(("identifier",))

    def at_punct(self, value: str) -> bool:
        t = self.peek()
        return t.kind == "punct" and t.value == value

    def at_keyword(self, word: str) -> bool:
        t = self.peek()
        return t.kind == "ident" and t.value == word

    # -- grammar rules ------------------------------------------------------

    def program(self) -> Program:
        start = self.peek()
        self.expect_keyword("vars")
        decls = [self.decl()]
        while self.at_punct(","):
            self.advance()
            decls.append(self.decl())
        self.expect_punct(";")
        in_list: list[tuple[str, int, int]] = []
        out_list: list[tuple[str, int, int]] = []
        if self.at_keyword("in"):
            self.advance()
            in_list = self.name_list()
            self.expect_punct(";")
        if self.at_keyword("out"):
            self.advance()
            out_list = self.name_list()
            self.expect_punct(";")
        body: list[Stmt] = []
        while self.peek().kind != "eof":
            body.append(self.stmt())
        return Program(start.line, start.col, decls, in_list, out_list, body)

    def name_list(self) -> list[tuple[str, int, int]]:
        t = self.expect_name()
        names = [(t.value, t.line, t.col)]
        while self.at_punct(","):
            self.advance()
            t = self.expect_name()
            names.append((t.value, t.line, t.col))
        return names

    def decl(self) -> Decl:
        t = self.expect_name()
        size: Optional[int] = None
        if self.at_punct("["):
            self.advance()
            num = self.peek()
            if num.kind != "number":
                raise self.error(("number",))
            self.advance()
            size = int(num.value, 0)
            if not 1 <= size <= MAX_ARRAY_SIZE:
                raise ParseError(
                    f"array size must be in 1..{MAX_ARRAY_SIZE}", num.line, num.col
                )
            self.expect_punct("]")
        return Decl(t.line, t.col, t.value, size)

    def stmt(self) -> Stmt:
        t = self.peek()
        if self.at_keyword("if"):
            return self.if_stmt()
        if self.at_keyword("while"):
            return self.while_stmt()
        if t.kind == "ident" and t.value not in KEYWORDS:
            lhs = self.lvalue()
            self.expect_punct("=")
            rhs = self.expr()
            self.expect_punct(";")
            return Assign(t.line, t.col, lhs, rhs)
        raise self.error(("statement",))

    def if_stmt(self) -> If:
        t = self.expect_keyword("if")
        self.expect_punct("(")
        cond = self.cond()
        self.expect_punct(")")
        then_body = self.block()
        else_body: list[Stmt] = []
        if self.at_keyword("else"):
            self.advance()
            else_body = self.block()
        return If(t.line, t.col, cond, then_body, else_body)

    def while_stmt(self) -> While:
        t = self.expect_keyword("while")
        self.expect_punct("(")
        cond = self.cond()
        self.expect_punct(")")
        body = self.block()
        return While(t.line, t.col, cond, body)

    def block(self) -> list[Stmt]:
        self.expect_punct("{")
        body: list[Stmt] = []
        while not self.at_punct("}"):
            if self.peek().kind == "eof":
                raise self.error(("'}'",))
            body.append(self.stmt())
        self.advance()
        return body

    def cond(self) -> Cond:
        left = self.expr()
        t = self.peek()
        if t.kind == "punct" and t.value in RELOPS:
            self.advance()
            right = self.expr()
            return Cond(t.line, t.col, t.value, left, right)
        raise self.error(tuple(f"'{op}'" for op in RELOPS))

    def expr(self) -> Expr:
        e = self.term()
        while self.at_punct("+") or self.at_punct("-"):
            op = self.advance()
            rhs = self.term()
            if op.value == "+":
                e = Add(op.line, op.col, e, rhs)
            else:
                e = Sub(op.line, op.col, e, rhs)
        return e

    def term(self) -> Expr:
        t = self.peek()
        if t.kind == "punct" and t.value == "-":
            nxt = self.toks[self.pos + 1]
            if nxt.kind == "number":
                self.advance()
                self.advance()
                return Const(t.line, t.col, (-int(nxt.value, 0)) & MASK32)
        if t.kind == "number":
            self.advance()
            return Const(t.line, t.col, int(t.value, 0) & MASK32)
        if t.kind == "ident" and t.value not in KEYWORDS:
            return self.lvalue()
        raise self.error(("number", "identifier"))

    def lvalue(self) -> LValue:
        t = self.expect_name()
        if self.at_punct("["):
            self.advance()
            idx = self.expr()
            self.expect_punct("]")
            return Index(t.line, t.col, t.value, idx)
        return Var(t.line, t.col, t.value)


def parse(text: str) -> Program:
    return _Parser(tokenize(text)).program()


# ---------------------------------------------------------------------------
# Pretty printer (canonical form; parse(pretty(parse(s))) == parse(s))
# ---------------------------------------------------------------------------

def pretty(prog: Program) -> str:
    out: list[str] = []
    decls = ", ".join(d.name if d.size is None else f"{d.name}[{d.size}]" for d in prog.decls)
    out.append(f"vars {decls};")
    if prog.in_list:
        out.append("in " + ", ".join(n for n, _, _ in prog.in_list) + ";")
    if prog.out_list:
        out.append("out " + ", ".join(n for n, _, _ in prog.out_list) + ";")
    _pp_stmts(prog.body, out, 0)
    return "\n".join(out) + "\n"


def _pp_stmts(stmts: list[Stmt], out: list[str], depth: int) -> None:
    pad = "  " * depth
    for s in stmts:
        if isinstance(s, Assign):
            out.append(f"{pad}{_pp_expr(s.lhs)} = {_pp_expr(s.rhs)};")
        elif isinstance(s, If):
            out.append(f"{pad}if ({_pp_cond(s.cond)}) {{")
            _pp_stmts(s.then_body, out, depth + 1)
            if s.else_body:
                out.append(f"{pad}}} else {{")
                _pp_stmts(s.else_body, out, depth + 1)
            out.append(f"{pad}}}")
        elif isinstance(s, While):
            out.append(f"{pad}while ({_pp_cond(s.cond)}) {{")
            _pp_stmts(s.body, out, depth + 1)
            out.append(f"{pad}}}")
        else:  # pragma: no cover
            raise TypeError(f"unknown statement {s!r}")


def _pp_cond(c: Cond) -> str:
    return f"{_pp_expr(c.left)} {c.op} {_pp_expr(c.right)}"


def _pp_expr(e: Expr) -> str:
    if isinstance(e, Const):
        return f"0x{e.value:X}" if e.value > 9 else str(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Index):
        return f"{e.name}[{_pp_expr(e.index)}]"
    if isinstance(e, Add):
        return f"{_pp_expr(e.left)} + {_pp_expr(e.right)}"
    if isinstance(e, Sub):
        return f"{_pp_expr(e.left)} - {_pp_expr(e.right)}"
    raise TypeError(f"unknown expression {e!r}")


# ---------------------------------------------------------------------------
# Checker
# ---------------------------------------------------------------------------

@dataclass
class Symbol:
    name: str
    kind: str        # "scalar" | "array"
    var_id: int      # location id (array base for arrays)
    size: int        # 1 for scalars


@dataclass
class CheckedAst:
    """Parsed program plus its symbol table and flat location layout.

    ``var_names`` lists one entry per machine location; array elements get
    ``name[k]`` entries at consecutive ids starting at the array base.
    """

    ast: Program
    symbols: dict[str, Symbol]
    var_names: list[str]
    in_ids: list[int]
    out_ids: list[int]

    def location(self, name: str, index: int = 0) -> int:
        return self.symbols[name].var_id + index


class _Checker:
    def __init__(self, ast: Program):
        self.ast = ast
        self.errors: list[SemanticError] = []
        self.symbols: dict[str, Symbol] = {}
        self.var_names: list[str] = []

    def err(self, code: str, msg: str, line: int, col: int) -> None:
        self.errors.append(SemanticError(code, msg, line, col))

    def check(self) -> CheckedAst:
        for d in self.ast.decls:
            if d.name in self.symbols:
                self.err("E_DUP", f"duplicate declaration of {d.name!r}", d.line, d.col)
                continue
            base = len(self.var_names)
            if d.size is None:
                self.symbols[d.name] = Symbol(d.name, "scalar", base, 1)
                self.var_names.append(d.name)
            else:
                self.symbols[d.name] = Symbol(d.name, "array", base, d.size)
                self.var_names.extend(f"{d.name}[{k}]" for k in range(d.size))

        in_ids = self._io_ids(self.ast.in_list, "in")
        out_ids = self._io_ids(self.ast.out_list, "out")

        written = {name for name, _, _ in self.ast.in_list if name in self.symbols}
        self._check_stmts(self.ast.body, written)

        if self.errors:
            raise SemanticErrors(self.errors)
        return CheckedAst(
            ast=self.ast,
            symbols=self.symbols,
            var_names=self.var_names,
            in_ids=in_ids,
            out_ids=out_ids,
        )

    def _io_ids(self, names: list[tuple[str, int, int]], which: str) -> list[int]:
        ids: list[int] = []
        seen: set[str] = set()
        for name, line, col in names:
            if name in seen:
                self.err("E_DUP", f"duplicate {which}-name {name!r}", line, col)
                continue
            seen.add(name)
            sym = self.symbols.get(name)
            if sym is None:
                self.err("E_UNDECL", f"undeclared {which}-name {name!r}", line, col)
            elif sym.kind != "scalar":
                self.err("E_IOKIND", f"{which}-name {name!r} must be a scalar", line, col)
            else:
                ids.append(sym.var_id)
        return ids

    # -- dataflow: returns the set of scalars definitely written ------------

    def _check_stmts(self, stmts: list[Stmt], written: set[str]) -> set[str]:
        for s in stmts:
            if isinstance(s, Assign):
                self._check_expr(s.rhs, written, 1)
                if isinstance(s.lhs, Var):
                    sym = self._lookup(s.lhs.name, s.lhs.line, s.lhs.col)
                    if sym is not None:
                        if sym.kind != "scalar":
                            self.err("E_KIND", f"array {s.lhs.name!r} used as a scalar", s.lhs.line, s.lhs.col)
                        else:
                            written.add(s.lhs.name)
                elif isinstance(s.lhs, Index):
                    self._check_index(s.lhs, written, 1)
            elif isinstance(s, If):
                self._check_cond(s.cond, written)
                wt = self._check_stmts(s.then_body, set(written))
                we = self._check_stmts(s.else_body, set(written))
                written |= wt & we
            elif isinstance(s, While):
                self._check_cond(s.cond, written)
                self._check_stmts(s.body, set(written))
        return written

    def _check_cond(self, c: Cond, written: set[str]) -> None:
        self._check_expr(c.left, written, 1)
        self._check_expr(c.right, written, 1)

    def _lookup(self, name: str, line: int, col: int) -> Optional[Symbol]:
        sym = self.symbols.get(name)
        if sym is None:
            self.err("E_UNDECL", f"undeclared name {name!r}", line, col)
        return sym

    def _check_index(self, e: Index, written: set[str], depth: int) -> None:
        sym = self._lookup(e.name, e.line, e.col)
        if sym is not None and sym.kind != "array":
            self.err("E_KIND", f"scalar {e.name!r} used as an array", e.line, e.col)
            sym = None
        if isinstance(e.index, Const) and sym is not None:
            if not e.index.value < sym.size:
                self.err(
                    "E_BOUNDS",
                    f"index {e.index.value} out of bounds for {e.name!r}[{sym.size}]",
                    e.index.line,
                    e.index.col,
                )
        self._check_expr(e.index, written, depth + 1)

    def _check_expr(self, e: Expr, written: set[str], depth: int) -> None:
        if depth > MAX_EXPR_DEPTH:
            self.err("E_DEPTH", f"expression nested deeper than {MAX_EXPR_DEPTH}", e.line, e.col)
            return
        if isinstance(e, Const):
            return
        if isinstance(e, Var):
            sym = self._lookup(e.name, e.line, e.col)
            if sym is not None:
                if sym.kind != "scalar":
                    self.err("E_KIND", f"array {e.name!r} used as a scalar", e.line, e.col)
                elif e.name not in written:
                    self.err("E_UNINIT", f"{e.name!r} may be read before it is written", e.line, e.col)
            return
        if isinstance(e, Index):
            self._check_index(e, written, depth)
            return
        if isinstance(e, (Add, Sub)):
            self._check_expr(e.left, written, depth + 1)
            self._check_expr(e.right, written, depth + 1)
            return
        raise TypeError(f"unknown expression {e!r}")  # pragma: no cover


def check(ast: Program) -> CheckedAst:
    return _Checker(ast).check()


def parse_and_check(text: str) -> CheckedAst:
    return check(parse(text))
