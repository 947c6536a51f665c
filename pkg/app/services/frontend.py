"""
Mini-language frontend: parser, graph compiler and reference interpreter

Grammar (EBNF)::

    program     = { function | declaration | statement } ;
    function    = [ label ] type NAME "(" [ param { "," param } ] ")" block ;
    param       = type declarator ;
    declaration = type declarator { "," declarator } ";" ;
    declarator  = NAME [ "=" expr ] [ "in" "[" expr "," expr "]" ] [ "limit" expr ] ;
    statement   = [ label ] ( declaration | NAME "=" ( call | expr ) ";" | call ";"
                | "while" "(" cond ")" block | "if" "(" cond ")" block [ "else" block ]
                | "assert" "(" cond ")" ";" | "skip" ";" | "return" [ expr ] ";" ) ;
    block       = "{" { statement } "}" | statement ;
    label       = NAME ":" ;
    call        = NAME "(" [ expr { "," expr } ] ")" ;
    cond        = relation { "&&" relation } ;
    relation    = expr [ ( "<" | "<=" | ">" | ">=" | "==" | "!=" ) expr ] ;
    expr        = term { ( "+" | "-" ) term } ;
    term        = unary { ( "*" | "/" ) unary } ;
    unary       = "-" unary | power ;
    power       = atom [ "^" unary ] ;
    atom        = NUMBER | NAME | "nondet" "(" expr "," expr ")" | intrinsic "(" expr ")"
                | "(" expr ")" | "true" | "false" ;
    intrinsic   = "sin" | "cos" | "sign" | "sgn" | "abs" ;

Types are ``int`` and ``real`` (``double``/``float`` are accepted as
``real``, ``void`` for functions). Arithmetic is exact rational arithmetic;
``/`` only divides by constants. ``nondet(a, b)`` is an arbitrary value in
[a, b] and becomes an uncertainty w ∈ [−1, 1] of the edge.
Intrinsics are replaced by their set-valued abstraction: the output range
by default, or a Taylor bound of sin/cos on the declared range of a plain
variable argument (``intrinsic_order``). They may not appear in conditions.

Every statement is a code location: a labeled statement names its node,
others are called ``l<line>``. Top-level declarations describe the initial
set; locals are ordinary assignments. The entry is ``main``, else the only
function, else the top-level statements. Calls are inlined unless a
contract gives the callee's return range.
"""

import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
import sympy

from app.core.graph import ENTRY, EXIT, Edge, GraphModel, StateVec, TransitionLabel
from app.core.polynomials import poly_terms, total_degree
from app.core.rational import qeye, qzeros, to_fraction
from app.core.semialgebraic import SemialgebraicSet
from app.errors import ModelError, ParseError, UnsupportedConstruct
from app.services.abstraction import Interval, abstract_nonlinearity

logger = logging.getLogger(__name__)

TYPES = {"int": "int", "real": "real", "double": "real", "float": "real"}
KEYWORDS = set(TYPES) | {"void", "while", "if", "else", "assert", "skip", "return", "in", "limit", "true", "false", "nondet"}
INTRINSICS = {"sin", "cos", "abs", "sign", "sgn", "mod", "sqrt", "log", "exp"}
# compiled through abstract_nonlinearity; the rest must be rewritten by hand
ABSTRACTED = ("sin", "cos", "sign", "sgn", "abs")
RELATIONS = ("<=", ">=", "==", "!=", "<", ">")
NEGATED = {">=": "<", "<=": ">", ">": "<=", "<": ">=", "==": "!=", "!=": "=="}

nondet = sympy.Function("nondet")
# intrinsic(kind index into ABSTRACTED, argument, draw order)
intrinsic = sympy.Function("intrinsic")

_TOKEN = re.compile(
    r"(?P<space>[ \t\r]+)|(?P<newline>\n)|(?P<comment>//[^\n]*|/\*.*?\*/)"
    r"|(?P<number>\d+(?:\.\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>&&|\|\||<=|>=|==|!=|[-+*/^()<>{}\[\],;:=!])",
    re.S,
)


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Location:
    line: int
    column: int


@dataclass
class Declaration:
    name: str
    type: str
    init: Optional[sympy.Expr] = None
    lower: Optional[Fraction] = None
    upper: Optional[Fraction] = None
    limit: Optional[Fraction] = None
    loc: Location = Location(0, 0)

    @property
    def bound(self) -> Optional[Fraction]:
        """Magnitude limit used for scaling and overflow"""
        if self.limit is not None:
            return self.limit
        if self.lower is not None and self.upper is not None:
            return max(abs(self.lower), abs(self.upper))
        return None


@dataclass
class Relation:
    expr: sympy.Expr  # lhs − rhs
    op: str
    loc: Location


@dataclass
class Condition:
    relations: Tuple[Relation, ...]
    constant: Optional[bool] = None  # set when the condition does not depend on the state


@dataclass
class Statement:
    loc: Location
    label: Optional[str] = None
    node: str = ""  # filled in once the whole source is parsed


@dataclass
class Assign(Statement):
    target: str = ""
    value: sympy.Expr = None


@dataclass
class Declare(Statement):
    declarations: Tuple[Declaration, ...] = ()


@dataclass
class Call(Statement):
    function: str = ""
    args: Tuple[sympy.Expr, ...] = ()
    target: Optional[str] = None


@dataclass
class While(Statement):
    cond: Condition = None
    body: Tuple[Statement, ...] = ()


@dataclass
class If(Statement):
    cond: Condition = None
    then: Tuple[Statement, ...] = ()
    orelse: Tuple[Statement, ...] = ()


@dataclass
class Assert(Statement):
    cond: Condition = None


@dataclass
class Skip(Statement):
    pass


@dataclass
class Return(Statement):
    value: Optional[sympy.Expr] = None


@dataclass
class Function:
    name: str
    type: str
    params: Tuple[Declaration, ...]
    body: Tuple[Statement, ...]
    label: Optional[str] = None
    loc: Location = Location(0, 0)


@dataclass
class Ast:
    declarations: Tuple[Declaration, ...]
    functions: Dict[str, Function]
    body: Tuple[Statement, ...]
    types: Dict[str, str] = field(default_factory=dict)
    start_label: Optional[str] = None

    @property
    def entry(self) -> Optional[Function]:
        if "main" in self.functions:
            return self.functions["main"]
        if len(self.functions) == 1 and not self.body:
            return next(iter(self.functions.values()))
        return None

    @property
    def variables(self) -> List[str]:
        return list(self.types)

    def statements(self) -> Iterator[Statement]:
        """Every statement, depth first, top level and function bodies"""
        blocks = [self.body] + [f.body for f in self.functions.values()]
        for block in blocks:
            yield from _walk(block)

    def declaration(self, name: str) -> Declaration:
        for d in self.declarations:
            if d.name == name:
                return d
        for f in self.functions.values():
            for d in f.params:
                if d.name == name:
                    return d
        for s in self.statements():
            if isinstance(s, Declare):
                for d in s.declarations:
                    if d.name == name:
                        return d
        raise KeyError(name)


def _walk(block: Sequence[Statement]) -> Iterator[Statement]:
    for s in block:
        yield s
        if isinstance(s, While):
            yield from _walk(s.body)
        elif isinstance(s, If):
            yield from _walk(s.then)
            yield from _walk(s.orelse)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(source: str) -> List[_Token]:
    tokens: List[_Token] = []
    line, start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - start + 1)
        kind, text = m.lastgroup, m.group()
        if kind in ("number", "name", "op"):
            tokens.append(_Token(kind, text, line, pos - start + 1))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            start = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.types: Dict[str, str] = {}
        self.scope: List[set] = [set()]
        self.calls: List[Call] = []
        self.nondets = 0

    # token helpers

    @property
    def tok(self) -> _Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> _Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Optional[_Token] = None) -> ParseError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return ParseError(f"{message}, found {found}", tok.line, tok.column)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "name") and self.tok.text == text

    def expect(self, text: str) -> _Token:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        return self.advance()

    def advance(self) -> _Token:
        tok = self.tok
        self.pos += 1
        return tok

    def name(self) -> _Token:
        if self.tok.kind != "name" or self.tok.text in KEYWORDS:
            raise self.error("expected a name")
        return self.advance()

    def loc(self) -> Location:
        return Location(self.tok.line, self.tok.column)

    # scopes

    def declare(self, name: str, type_: str, tok: _Token) -> None:
        if name in self.types:
            raise ParseError(f"variable {name!r} is already declared", tok.line, tok.column)
        self.types[name] = type_
        self.scope[-1].add(name)

    def visible(self, name: str) -> bool:
        return any(name in s for s in self.scope)

    # program

    def program(self) -> Ast:
        declarations: List[Declaration] = []
        functions: Dict[str, Function] = {}
        body: List[Statement] = []
        start_label = None
        while self.tok.kind != "eof":
            label = None
            if self.tok.kind == "name" and self.peek().text == ":" and self.tok.text not in KEYWORDS:
                label = self.advance().text
                self.advance()
            if (self.tok.text in TYPES or self.tok.text == "void") and self.peek(2).text == "(":
                fn = self.function(label)
                if fn.name in functions:
                    raise ParseError(f"function {fn.name!r} is defined twice", fn.loc.line, fn.loc.column)
                functions[fn.name] = fn
            elif self.tok.text in TYPES and not body:
                for d in self.declarators():
                    declarations.append(d)
                start_label = start_label or label
            else:
                body.append(self.statement(label))
        for call in self.calls:
            if call.function not in functions:
                raise ParseError(f"call to undefined function {call.function!r}", call.loc.line, call.loc.column)
        ast = Ast(tuple(declarations), functions, tuple(body), dict(self.types), start_label)
        _assign_nodes(ast)
        return ast

    def function(self, label: Optional[str]) -> Function:
        loc = self.loc()
        type_ = "void" if self.advance().text == "void" else TYPES[self.tokens[self.pos - 1].text]
        name = self.name().text
        self.expect("(")
        self.scope.append(set())
        params: List[Declaration] = []
        while not self.at(")"):
            if params:
                self.expect(",")
            if self.tok.text not in TYPES:
                raise self.error("expected a parameter type")
            ptype = TYPES[self.advance().text]
            params.append(self.declarator(ptype, allow_init=False))
        self.expect(")")
        body = self.block()
        self.scope.pop()
        return Function(name, type_, tuple(params), tuple(body), label, loc)

    def declarators(self) -> List[Declaration]:
        type_ = TYPES[self.advance().text]
        decls = [self.declarator(type_)]
        while self.at(","):
            self.advance()
            decls.append(self.declarator(type_))
        self.expect(";")
        return decls

    def declarator(self, type_: str, allow_init: bool = True) -> Declaration:
        tok = self.name()
        loc = Location(tok.line, tok.column)
        init = lower = upper = limit = None
        if allow_init and self.at("="):
            self.advance()
            init = self.expr()
        if self.at("in"):
            self.advance()
            self.expect("[")
            lower = self.constant(self.expr(), "range bounds")
            self.expect(",")
            upper = self.constant(self.expr(), "range bounds")
            self.expect("]")
            if lower > upper:
                raise ParseError(f"empty range [{lower}, {upper}] for {tok.text!r}", tok.line, tok.column)
        if self.at("limit"):
            self.advance()
            limit = self.constant(self.expr(), "limit")
            if limit <= 0:
                raise ParseError(f"limit of {tok.text!r} must be positive", tok.line, tok.column)
        self.declare(tok.text, type_, tok)
        return Declaration(tok.text, type_, init, lower, upper, limit, loc)

    def constant(self, expr: sympy.Expr, what: str) -> Fraction:
        if expr.free_symbols or expr.atoms(nondet, intrinsic):
            tok = self.tokens[self.pos - 1]
            raise ParseError(f"{what} must be constant", tok.line, tok.column)
        return to_fraction(sympy.Rational(expr))

    # statements

    def block(self) -> List[Statement]:
        if not self.at("{"):
            return [self.statement(self.label())]
        self.advance()
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("expected '}'")
            stmts.append(self.statement(self.label()))
        self.advance()
        return stmts

    def label(self) -> Optional[str]:
        if self.tok.kind == "name" and self.peek().text == ":" and self.tok.text not in KEYWORDS:
            text = self.advance().text
            self.advance()
            return text
        return None

    def statement(self, label: Optional[str]) -> Statement:
        loc = self.loc()
        word = self.tok.text if self.tok.kind == "name" else None
        if word in TYPES:
            return Declare(loc, label, declarations=tuple(self.declarators()))
        if word == "while":
            self.advance()
            cond = self.condition_in_parens()
            return While(loc, label, cond=cond, body=tuple(self.block()))
        if word == "if":
            self.advance()
            cond = self.condition_in_parens()
            then = self.block()
            orelse: List[Statement] = []
            if self.at("else"):
                self.advance()
                orelse = self.block()
            return If(loc, label, cond=cond, then=tuple(then), orelse=tuple(orelse))
        if word == "assert":
            self.advance()
            cond = self.condition_in_parens()
            self.expect(";")
            return Assert(loc, label, cond=cond)
        if word == "skip":
            self.advance()
            self.expect(";")
            return Skip(loc, label)
        if word == "return":
            self.advance()
            value = None if self.at(";") else self.expr()
            self.expect(";")
            return Return(loc, label, value=value)
        if word in ("for", "do", "switch", "goto", "break", "continue"):
            raise UnsupportedConstruct(f"'{word}' statements are not part of the language (line {loc.line})")
        tok = self.name()
        if self.at("(") and not self.visible(tok.text):
            stmt = self.call(tok, loc, label, None)
            self.expect(";")
            return stmt
        self.use(tok)
        self.expect("=")
        if self.tok.kind == "name" and self.peek().text == "(" and self.tok.text not in KEYWORDS | INTRINSICS:
            stmt = self.call(self.advance(), loc, label, tok.text)
        else:
            stmt = Assign(loc, label, target=tok.text, value=self.expr())
        self.expect(";")
        return stmt

    def call(self, tok: _Token, loc: Location, label: Optional[str], target: Optional[str]) -> Call:
        self.expect("(")
        args = []
        while not self.at(")"):
            if args:
                self.expect(",")
            args.append(self.expr())
        self.expect(")")
        stmt = Call(loc, label, function=tok.text, args=tuple(args), target=target)
        self.calls.append(stmt)
        return stmt

    def use(self, tok: _Token) -> None:
        if not self.visible(tok.text):
            raise ParseError(f"undeclared variable {tok.text!r}", tok.line, tok.column)

    def condition_in_parens(self) -> Condition:
        self.expect("(")
        relations: List[Relation] = []
        constant: Optional[bool] = True
        while True:
            if self.at("||"):
                raise UnsupportedConstruct(f"'||' in conditions (line {self.tok.line}); split the branch instead")
            loc = self.loc()
            lhs = self.expr()
            op = self.tok.text if self.tok.kind == "op" and self.tok.text in RELATIONS else None
            if op is None:
                if lhs.free_symbols or lhs.atoms(nondet, intrinsic):
                    raise self.error("expected a comparison")
                truth = bool(lhs != 0)
            else:
                self.advance()
                rhs = self.expr()
                expr = sympy.expand(lhs - rhs)
                if expr.atoms(nondet):
                    raise UnsupportedConstruct(f"nondet() inside a condition (line {loc.line})")
                if expr.atoms(intrinsic):
                    raise UnsupportedConstruct(f"intrinsic call inside a condition (line {loc.line}); assign it first")
                if expr.free_symbols:
                    relations.append(Relation(expr, op, loc))
                    truth = None
                else:
                    truth = _holds(to_fraction(sympy.Rational(expr)), op, Fraction(0))
            if truth is False:
                constant = False
            elif truth is None and constant is True:
                constant = None
            if not self.at("&&"):
                break
            self.advance()
        self.expect(")")
        if constant is False:
            return Condition((), False)
        return Condition(tuple(relations), True if not relations else None)

    # expressions

    def expr(self) -> sympy.Expr:
        value = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance().text
            rhs = self.term()
            value = value + rhs if op == "+" else value - rhs
        return value

    def term(self) -> sympy.Expr:
        value = self.unary()
        while self.at("*") or self.at("/"):
            tok = self.advance()
            rhs = self.unary()
            if tok.text == "*":
                value = value * rhs
            else:
                if rhs.free_symbols or rhs.atoms(nondet, intrinsic):
                    raise UnsupportedConstruct(
                        f"division by a program variable (line {tok.line}, column {tok.column}); "
                        "guard it with an assert and divide by a constant"
                    )
                if rhs == 0:
                    raise ParseError("division by zero", tok.line, tok.column)
                value = value / rhs
        return value

    def unary(self) -> sympy.Expr:
        if self.at("-"):
            self.advance()
            return -self.unary()
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> sympy.Expr:
        base = self.atom()
        if self.at("^"):
            tok = self.advance()
            exponent = self.unary()
            if exponent.free_symbols or not (exponent.is_Integer and exponent >= 0):
                raise ParseError("exponent must be a nonnegative integer constant", tok.line, tok.column)
            base = base ** exponent
        return base

    def atom(self) -> sympy.Expr:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return sympy.Rational(tok.text)
        if self.at("("):
            self.advance()
            value = self.expr()
            self.expect(")")
            return value
        if self.at("true") or self.at("false"):
            self.advance()
            return sympy.Integer(1 if tok.text == "true" else 0)
        if self.at("nondet"):
            self.advance()
            self.expect("(")
            lo = self.constant(self.expr(), "nondet bounds")
            self.expect(",")
            hi = self.constant(self.expr(), "nondet bounds")
            self.expect(")")
            if lo > hi:
                raise ParseError(f"empty nondet range [{lo}, {hi}]", tok.line, tok.column)
            self.nondets += 1
            return nondet(_rational(lo), _rational(hi), sympy.Integer(self.nondets))
        if tok.kind == "name" and tok.text not in KEYWORDS:
            if self.peek().text == "(":
                if tok.text in ABSTRACTED:
                    return self.intrinsic_call()
                if tok.text in INTRINSICS:
                    raise UnsupportedConstruct(
                        f"intrinsic {tok.text}() at line {tok.line} must be rewritten with the abstraction module before compiling"
                    )
                raise UnsupportedConstruct(f"call to {tok.text}() inside an expression (line {tok.line}); assign its result first")
            self.advance()
            self.use(tok)
            return sympy.Symbol(tok.text)
        raise self.error("expected an expression")


    def intrinsic_call(self) -> sympy.Expr:
        tok = self.advance()
        self.expect("(")
        arg = self.expr()
        self.expect(")")
        if arg.atoms(nondet, intrinsic):
            raise UnsupportedConstruct(f"{tok.text}() of a nondet or intrinsic value (line {tok.line}); assign the argument first")
        self.nondets += 1
        return intrinsic(sympy.Integer(ABSTRACTED.index(tok.text)), arg, sympy.Integer(self.nondets))


def _rational(q: Fraction) -> sympy.Rational:
    return sympy.Rational(q.numerator, q.denominator)


def _evaluate(kind: str, x: Fraction) -> Fraction:
    """Concrete intrinsic value; sin and cos to 30 digits"""
    if kind == "abs":
        return abs(x)
    if kind in ("sign", "sgn"):
        return Fraction((x > 0) - (x < 0))
    with mpmath.workdps(40):
        value = getattr(mpmath, kind)(mpmath.mpf(x.numerator) / x.denominator)
        return Fraction(mpmath.nstr(value, 30))


def _holds(lhs, op: str, rhs) -> bool:
    return {
        "<": lhs < rhs, "<=": lhs <= rhs, ">": lhs > rhs,
        ">=": lhs >= rhs, "==": lhs == rhs, "!=": lhs != rhs,
    }[op]


def _assign_nodes(ast: Ast) -> None:
    stmts = list(ast.statements())
    per_line: Dict[int, int] = {}
    for s in stmts:
        per_line[s.loc.line] = per_line.get(s.loc.line, 0) + 1
    taken = set()
    for s in stmts:
        if s.label:
            name = s.label
        elif per_line[s.loc.line] > 1:
            name = f"l{s.loc.line}.{s.loc.column}"
        else:
            name = f"l{s.loc.line}"
        if name in taken:
            raise ParseError(f"location {name!r} is defined twice", s.loc.line, s.loc.column)
        taken.add(name)
        s.node = name


def parse_program(source: str) -> Ast:
    """Parse mini-language source; errors carry line and column"""
    ast = _Parser(source).program()
    logger.debug("parsed %d functions, %d variables", len(ast.functions), len(ast.types))
    return ast


# ---------------------------------------------------------------------------
# layout shared by the compiler and the interpreter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompileOptions:
    """
    scale: divide every variable by one factor M; True takes M as the
        largest declared bound, a number is used as M itself
    guard_gap: ε used to close strict comparisons over reals
    contracts: callee name → (lower, upper) range of its return value;
        such calls are not inlined
    intrinsic_order: range, or linear/cubic Taylor for sin and cos where the
        argument is a variable with a declared range
    """

    scale: Union[bool, int, Fraction] = False
    guard_gap: Fraction = Fraction(0)
    default_limit: Optional[Fraction] = None
    contracts: Mapping[str, Tuple[Fraction, Fraction]] = field(default_factory=dict)
    intrinsic_order: str = "range"
    name: str = "program"


class _Layout:
    """Node names, state variables and inlining prefixes of a program"""

    def __init__(self, ast: Ast, opts: CompileOptions):
        self.ast = ast
        self.opts = opts
        entry = ast.entry
        self.entry = entry
        if entry is not None:
            self.start = entry.label or ast.start_label or ENTRY
            returns = [s for s in _walk(entry.body) if isinstance(s, Return)]
            self.terminal = next((s.label for s in returns if s.label), EXIT)
        else:
            if ast.functions and not ast.body:
                raise UnsupportedConstruct("several functions and no main(); cannot pick the entry point")
            self.start = ast.start_label or ENTRY
            self.terminal = EXIT
        if self.start == self.terminal:
            raise ModelError("start and terminal locations must differ", field="nodes")
        self.variables: List[str] = [d.name for d in ast.declarations]
        self.prefixes: Dict[str, str] = {}
        self.inlined: set = set()
        if entry is not None:
            self.variables += [d.name for d in entry.params]
            self._visit(entry.body, "", [entry.name])
        else:
            self._visit(ast.body, "", [])

    def _visit(self, block: Sequence[Statement], prefix: str, stack: List[str]) -> None:
        for s in block:
            if isinstance(s, Declare):
                self.variables += [d.name for d in s.declarations if d.name not in self.variables]
            elif isinstance(s, While):
                self._visit(s.body, prefix, stack)
            elif isinstance(s, If):
                self._visit(s.then, prefix, stack)
                self._visit(s.orelse, prefix, stack)
            elif isinstance(s, Call) and s.function not in self.opts.contracts:
                if s.function in stack:
                    raise UnsupportedConstruct(f"recursive call to {s.function}() at line {s.loc.line}")
                fn = self.ast.functions[s.function]
                site = prefix + s.node
                callee_prefix = "" if fn.name not in self.inlined else f"{site}/"
                self.inlined.add(fn.name)
                self.prefixes[site] = callee_prefix
                self.variables += [d.name for d in fn.params if d.name not in self.variables]
                self._visit(fn.body, callee_prefix, stack + [fn.name])

    def node(self, stmt: Statement, prefix: str, in_entry: bool) -> str:
        if in_entry and isinstance(stmt, Return):
            return self.terminal
        return prefix + stmt.node

    def function_node(self, fn: Function, prefix: str) -> str:
        return prefix + (fn.label or fn.name)

    def bounds(self) -> Dict[str, Optional[Fraction]]:
        out = {}
        for name in self.variables:
            bound = self.ast.declaration(name).bound
            out[name] = bound if bound is not None else self.opts.default_limit
        return out


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------


class _Compiler:
    def __init__(self, ast: Ast, opts: CompileOptions):
        self.ast = ast
        self.opts = opts
        self.layout = _Layout(ast, opts)
        self.variables = self.layout.variables
        self.symbols = [sympy.Symbol(v) for v in self.variables]
        self.index = {v: i for i, v in enumerate(self.variables)}
        self.nodes: List[str] = [self.layout.start]
        self.edges: List[Tuple[str, str, TransitionLabel, SemialgebraicSet]] = []
        self.unsafe: Dict[str, List[SemialgebraicSet]] = {}
        self.draws = 0  # declaration and contract draws get negative indices

    @property
    def n(self) -> int:
        return len(self.variables)

    # sets

    def _integral(self, expr: sympy.Expr) -> bool:
        if any(self.ast.types.get(s.name) != "int" for s in expr.free_symbols):
            return False
        return all(c.is_integer for c in sympy.Poly(expr, *self.symbols).coeffs())

    def _constraint(self, expr: sympy.Expr, equality: bool, loc: Location) -> SemialgebraicSet:
        unknown = [s.name for s in expr.free_symbols if s.name not in self.index]
        if unknown:
            raise ModelError(f"condition at line {loc.line} uses {unknown[0]!r}, which is not a state variable here")
        terms = poly_terms(sympy.Poly(expr, *self.symbols, domain="QQ"))
        degree = max((total_degree(e) for e in terms), default=0)
        if degree > 2:
            raise UnsupportedConstruct(f"guard of degree {degree} at line {loc.line}; only degree ≤ 2 is supported")
        key = "eq" if equality else "ineq"
        return SemialgebraicSet.from_terms(self.n, **{key: [terms]})

    def _relation_sets(self, rel: Relation, negate: bool, gap: Fraction) -> List[SemialgebraicSet]:
        op = NEGATED[rel.op] if negate else rel.op
        d = rel.expr
        shift = 1 if self._integral(d) else gap
        if op == ">=":
            return [self._constraint(d, False, rel.loc)]
        if op == "<=":
            return [self._constraint(-d, False, rel.loc)]
        if op == ">":
            return [self._constraint(d - shift, False, rel.loc)]
        if op == "<":
            return [self._constraint(-d - shift, False, rel.loc)]
        if op == "==":
            return [self._constraint(d, True, rel.loc)]
        return [self._constraint(d - shift, False, rel.loc), self._constraint(-d - shift, False, rel.loc)]

    def condition_sets(self, cond: Condition, gap: Fraction) -> List[SemialgebraicSet]:
        """Disjuncts whose union is the closed condition"""
        if cond.constant is not None:
            return [SemialgebraicSet.universal(self.n)] if cond.constant else []
        sets = [SemialgebraicSet.universal(self.n)]
        for rel in cond.relations:
            sets = [s.intersect(alt) for s in sets for alt in self._relation_sets(rel, False, gap)]
        return sets

    def complement_sets(self, cond: Condition, gap: Fraction) -> List[SemialgebraicSet]:
        if cond.constant is not None:
            return [] if cond.constant else [SemialgebraicSet.universal(self.n)]
        return [alt for rel in cond.relations for alt in self._relation_sets(rel, True, gap)]

    # labels

    def label(self, assigns: Sequence[Tuple[str, sympy.Expr]], simultaneous: bool = False) -> TransitionLabel:
        current = {s: s for s in self.symbols}
        if simultaneous:
            current.update({sympy.Symbol(t): e for t, e in assigns})
        else:
            for target, expr in assigns:
                current[sympy.Symbol(target)] = expr.xreplace(current)
        images = [sympy.expand(current[s]) for s in self.symbols]
        calls = sorted(set().union(*[e.atoms(intrinsic) for e in images]), key=lambda a: int(a.args[2]))
        if calls:
            spliced = {a: self._abstract(a) for a in calls}
            images = [sympy.expand(e.xreplace(spliced)) for e in images]
        draws = sorted(set().union(*[e.atoms(nondet) for e in images]), key=lambda a: int(a.args[2]))
        ws = []
        replacement = {}
        for a in draws:
            lo, hi = a.args[0], a.args[1]
            if lo == hi:
                replacement[a] = lo
            else:
                w = sympy.Symbol(f"_w{len(ws)}")
                ws.append(w)
                replacement[a] = (lo + hi) / 2 + (hi - lo) / 2 * w
        images = [sympy.expand(e.xreplace(replacement)) for e in images]
        n, nw = self.n, len(ws)
        gens = list(self.symbols) + ws
        A, B, E = qzeros((n, n)), qzeros((n, nw)), qzeros(n)
        higher = []
        for r, expr in enumerate(images):
            extra = {}
            for e, c in poly_terms(sympy.Poly(expr, *gens, domain="QQ")).items():
                d = total_degree(e)
                if d == 0:
                    E[r] = c
                elif d == 1:
                    col = e.index(1)
                    if col < n:
                        A[r, col] = c
                    else:
                        B[r, col - n] = c
                else:
                    extra[e] = c
            higher.append(extra)
        return TransitionLabel(A, B, None, E, None, tuple(higher) if any(higher) else None)

    def edge(self, source: str, target: str, label: TransitionLabel, passport: Optional[SemialgebraicSet] = None) -> None:
        for node in (source, target):
            if node not in self.nodes:
                self.nodes.append(node)
        self.edges.append((source, target, label, passport or SemialgebraicSet.universal(self.n)))

    def identity(self) -> TransitionLabel:
        return TransitionLabel(qeye(self.n))

    # statements

    def block(self, stmts: Sequence[Statement], succ: str, ctx: "_Context") -> str:
        if not stmts:
            return succ
        names = [self.layout.node(s, ctx.prefix, ctx.in_entry) for s in stmts] + [succ]
        for s, here, nxt in zip(stmts, names, names[1:]):
            if here not in self.nodes:
                self.nodes.append(here)
            self.statement(s, here, nxt, ctx)
        return names[0]

    def statement(self, s: Statement, here: str, succ: str, ctx: "_Context") -> None:
        gap = to_fraction(self.opts.guard_gap)
        if isinstance(s, Assign):
            self.edge(here, succ, self.label([(s.target, s.value)]))
        elif isinstance(s, Declare):
            assigns = []
            for d in s.declarations:
                if d.init is not None:
                    assigns.append((d.name, d.init))
                elif d.lower is not None and d.upper is not None:
                    assigns.append((d.name, self._draw(d.lower, d.upper)))
            self.edge(here, succ, self.label(assigns) if assigns else self.identity())
        elif isinstance(s, (Skip, Assert)):
            if isinstance(s, Assert):
                self.unsafe.setdefault(here, []).extend(self.complement_sets(s.cond, Fraction(0)))
            self.edge(here, succ, self.identity())
        elif isinstance(s, While):
            body = self.block(s.body, here, ctx)
            for passport in self.condition_sets(s.cond, gap):
                self.edge(here, body, self.identity(), passport)
            for passport in self.complement_sets(s.cond, gap):
                self.edge(here, succ, self.identity(), passport)
        elif isinstance(s, If):
            then = self.block(s.then, succ, ctx)
            orelse = self.block(s.orelse, succ, ctx)
            for passport in self.condition_sets(s.cond, gap):
                self.edge(here, then, self.identity(), passport)
            for passport in self.complement_sets(s.cond, gap):
                self.edge(here, orelse, self.identity(), passport)
        elif isinstance(s, Return):
            if ctx.in_entry:
                return
            assigns = [(ctx.target, s.value)] if ctx.target and s.value is not None else []
            self.edge(here, ctx.succ, self.label(assigns) if assigns else self.identity())
        elif isinstance(s, Call):
            self.call(s, here, succ, ctx)
        else:
            raise UnsupportedConstruct(f"statement {type(s).__name__} at line {s.loc.line}")

    def _draw(self, lo: Fraction, hi: Fraction) -> sympy.Expr:
        self.draws -= 1
        return nondet(_rational(lo), _rational(hi), sympy.Integer(self.draws))

    def _domain(self, arg: sympy.Expr) -> Optional[Interval]:
        if not isinstance(arg, sympy.Symbol):
            return None
        d = self.ast.declaration(arg.name)
        if d.lower is not None and d.upper is not None:
            return d.lower, d.upper
        bound = d.bound if d.bound is not None else self.opts.default_limit
        return None if bound is None else (-bound, bound)

    def _abstract(self, call: sympy.Expr) -> sympy.Expr:
        """The intrinsic call as its relation output, one fresh draw per w"""
        kind, arg = ABSTRACTED[int(call.args[0])], call.args[1]
        domain = self._domain(arg)
        order = self.opts.intrinsic_order
        if kind not in ("sin", "cos") or domain is None:
            order = "range"
        if domain is None:
            if kind == "abs":
                raise ModelError(f"abs({arg}) needs an argument variable with a declared range or limit", field="abs")
            domain = (Fraction(-1), Fraction(1))
        rel = abstract_nonlinearity(kind, domain, order)
        output = rel.output.xreplace({rel.inputs[0]: arg})
        return output.xreplace({w: self._draw(Fraction(-1), Fraction(1)) for w in rel.ws})

    def call(self, s: Call, here: str, succ: str, ctx: "_Context") -> None:
        fn = self.ast.functions[s.function]
        if len(s.args) != len(fn.params):
            raise ModelError(f"{fn.name}() takes {len(fn.params)} arguments, line {s.loc.line} passes {len(s.args)}")
        if s.function in self.opts.contracts:
            lo, hi = (to_fraction(b) for b in self.opts.contracts[s.function])
            assigns = [(s.target, self._draw(lo, hi))] if s.target else []
            self.edge(here, succ, self.label(assigns) if assigns else self.identity())
            return
        prefix = self.layout.prefixes[ctx.prefix + s.node]
        entry = self.layout.function_node(fn, prefix)
        label = self.label([(p.name, a) for p, a in zip(fn.params, s.args)], simultaneous=True)
        self.edge(here, entry, label)
        inner = _Context(prefix, False, s.target, succ)
        first = self.block(fn.body, succ, inner)
        self.edge(entry, first, self.identity())

    # model

    def model(self) -> GraphModel:
        start, terminal = self.layout.start, self.layout.terminal
        ctx = _Context("", True, None, terminal)
        body = self.layout.entry.body if self.layout.entry is not None else self.ast.body
        first = self.block(body, terminal, ctx)
        self.edge(start, first, self.identity())
        if terminal not in self.nodes:
            self.nodes.append(terminal)
        nodes = [start] + [v for v in self.nodes if v not in (start, terminal)] + [terminal]

        init = SemialgebraicSet.universal(self.n)
        declared = list(self.ast.declarations) + (list(self.layout.entry.params) if self.layout.entry else [])
        for d in declared:
            i = self.index[d.name]
            if d.init is not None:
                if d.init.free_symbols or d.init.atoms(nondet, intrinsic):
                    raise ModelError(f"initializer of {d.name!r} must be constant at the top level", field=d.name)
                row = [Fraction(0)] * (self.n + 1)
                row[i], row[self.n] = Fraction(1), -to_fraction(sympy.Rational(d.init))
                init = init.intersect(SemialgebraicSet.from_rows(self.n, eq=[row]))
            elif d.lower is not None:
                lower = [None] * self.n
                upper = [None] * self.n
                lower[i], upper[i] = d.lower, d.upper
                init = init.intersect(SemialgebraicSet.box(lower, upper))

        bounds = self.layout.bounds()
        overflow = None if any(b is None for b in bounds.values()) else tuple(bounds[v] for v in self.variables)
        scale = Fraction(1)
        if self.opts.scale is not False and self.opts.scale is not None:
            scale = self._scale_factor(bounds)

        counts: Dict[Tuple[str, str], int] = {}
        edges = []
        for source, target, label, passport in self.edges:
            counts[(source, target)] = counts.get((source, target), 0) + 1
            if scale != 1:
                label, passport = _rescale_label(label, scale), _rescale_set(passport, scale)
            edges.append(Edge(source, target, counts[(source, target)], label, passport))
        unsafe = {k: tuple(_rescale_set(s, scale) if scale != 1 else s for s in v) for k, v in self.unsafe.items()}
        if scale != 1:
            init = _rescale_set(init, scale)
            overflow = tuple(a / scale for a in overflow) if overflow else None
        return GraphModel(
            tuple(self.variables), tuple(nodes), tuple(edges), init, {}, unsafe, overflow, scale,
            start, terminal, self.opts.name,
        )

    def _scale_factor(self, bounds: Mapping[str, Optional[Fraction]]) -> Fraction:
        if self.opts.scale is True:
            known = [b for b in bounds.values() if b is not None]
            if not known:
                raise ModelError("no variable has a declared range or limit; cannot scale", field="scale")
            return max(known)
        scale = to_fraction(self.opts.scale)
        if scale <= 0:
            raise ModelError(f"scale factor must be positive, got {scale}", field="scale")
        return scale


@dataclass(frozen=True)
class _Context:
    prefix: str
    in_entry: bool
    target: Optional[str]
    succ: str


def _rescale_set(s: SemialgebraicSet, scale: Fraction, extra: int = 0) -> SemialgebraicSet:
    """The set in coordinates x̃ = x / scale (trailing ``extra`` coordinates unscaled)"""
    D = qeye(s.dim)
    for i in range(s.dim - extra):
        D[i, i] = scale
    return s.pullback(D)


def _rescale_label(label: TransitionLabel, scale: Fraction) -> TransitionLabel:
    n = label.n
    higher = None
    if label.nonlinear is not None:
        higher = tuple(
            {e: c * scale ** sum(e[:n]) / scale for e, c in terms.items()} for terms in label.nonlinear
        )
    return TransitionLabel(
        label.A,
        label.B / scale,
        label.C / scale,
        label.E / scale,
        _rescale_set(label.constraints, scale, extra=label.n_w + label.n_v),
        higher,
    )


def compile_to_graph(ast: Ast, opts: Optional[CompileOptions] = None) -> GraphModel:
    """One node per code location; branches become complementary passports"""
    opts = opts or CompileOptions()
    model = _Compiler(ast, opts).model()
    logger.info("compiled %s: %d nodes, %d edges, %d variables", model.name, len(model.nodes), len(model.edges), model.n)
    return model


def compile_source(source: str, opts: Optional[CompileOptions] = None) -> GraphModel:
    return compile_to_graph(parse_program(source), opts)


# ---------------------------------------------------------------------------
# reference interpreter
# ---------------------------------------------------------------------------


class _BudgetExhausted(Exception):
    pass


class _Returned(Exception):
    def __init__(self, value):
        self.value = value


class _Interpreter:
    """Exact-rational execution emitting (node, state) at every location"""

    def __init__(self, ast: Ast, opts: CompileOptions, rng: np.random.Generator, max_steps: int):
        self.ast = ast
        self.layout = _Layout(ast, opts)
        self.opts = opts
        self.rng = rng
        self.max_steps = max_steps
        self.states: List[StateVec] = []

    def emit(self, node: str, env: Dict[str, Fraction]) -> None:
        self.states.append(StateVec(node, tuple(env[v] for v in self.layout.variables)))
        if len(self.states) > self.max_steps:
            raise _BudgetExhausted

    def eval(self, expr: sympy.Expr, env: Dict[str, Fraction]) -> Fraction:
        draws = {}
        for a in expr.atoms(nondet):
            draws[a] = _rational(self.pick(to_fraction(a.args[0]), to_fraction(a.args[1])))
        for a in expr.atoms(intrinsic):
            draws[a] = _rational(_evaluate(ABSTRACTED[int(a.args[0])], self.eval(a.args[1], env)))
        subs = {sympy.Symbol(k): _rational(v) for k, v in env.items()}
        return to_fraction(sympy.Rational(expr.xreplace(draws).xreplace(subs)))

    def pick(self, lo: Fraction, hi: Fraction) -> Fraction:
        if lo == hi:
            return lo
        k = int(self.rng.integers(0, 257))
        return lo + (hi - lo) * Fraction(k, 256)

    def holds(self, cond: Condition, env) -> bool:
        if cond.constant is not None:
            return cond.constant
        return all(_holds(self.eval(r.expr, env), r.op, Fraction(0)) for r in cond.relations)

    def run(self, inputs: Mapping[str, Fraction]) -> List[StateVec]:
        env = {v: Fraction(0) for v in self.layout.variables}
        for d in self.ast.declarations:
            if d.init is not None:
                env[d.name] = self.eval(d.init, env)
        env.update({k: to_fraction(v) for k, v in inputs.items()})
        entry = self.layout.entry
        try:
            self.emit(self.layout.start, env)
            try:
                self.block(entry.body if entry else self.ast.body, env, _Context("", True, None, self.layout.terminal))
            except _Returned:
                pass
            self.emit(self.layout.terminal, env)
        except _BudgetExhausted:
            pass
        return self.states

    def block(self, stmts, env, ctx: _Context) -> None:
        for s in stmts:
            self.statement(s, env, ctx)

    def statement(self, s: Statement, env, ctx: _Context) -> None:
        here = self.layout.node(s, ctx.prefix, ctx.in_entry)
        if isinstance(s, Return) and ctx.in_entry:
            raise _Returned(None)
        if isinstance(s, While):
            while True:
                self.emit(here, env)
                if not self.holds(s.cond, env):
                    return
                self.block(s.body, env, ctx)
        self.emit(here, env)
        if isinstance(s, Assign):
            env[s.target] = self.eval(s.value, env)
        elif isinstance(s, Declare):
            for d in s.declarations:
                if d.init is not None:
                    env[d.name] = self.eval(d.init, env)
                elif d.lower is not None and d.upper is not None:
                    env[d.name] = self.pick(d.lower, d.upper)
        elif isinstance(s, If):
            self.block(s.then if self.holds(s.cond, env) else s.orelse, env, ctx)
        elif isinstance(s, Return):
            raise _Returned(None if s.value is None else self.eval(s.value, env))
        elif isinstance(s, Call):
            fn = self.ast.functions[s.function]
            if s.function in self.opts.contracts:
                lo, hi = (to_fraction(b) for b in self.opts.contracts[s.function])
                if s.target:
                    env[s.target] = self.pick(lo, hi)
                return
            args = [self.eval(a, env) for a in s.args]
            prefix = self.layout.prefixes[ctx.prefix + s.node]
            for p, a in zip(fn.params, args):
                env[p.name] = a
            self.emit(self.layout.function_node(fn, prefix), env)
            try:
                self.block(fn.body, env, _Context(prefix, False, s.target, ctx.succ))
            except _Returned as ret:
                if s.target and ret.value is not None:
                    env[s.target] = ret.value


def execute(
    ast: Ast,
    inputs: Mapping[str, object],
    opts: Optional[CompileOptions] = None,
    max_steps: int = 10_000,
    seed: int = 0,
) -> List[StateVec]:
    """
    Run the program exactly and return the visited (location, state) pairs

    States are in physical units. Unset variables start at 0; ``nondet``
    draws come from a seeded generator.
    """
    opts = opts or CompileOptions()
    return _Interpreter(ast, opts, np.random.default_rng(seed), max_steps).run(inputs)
