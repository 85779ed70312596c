"""Parser for the declarative temporal preference model format.

A model document is line-oriented.  Top-level directives declare the schema;
each `interval` line opens a block holding that interval's semantic ranges and
CPT statements::

    model provider-3yr
    decision N
    attribute A levels low high agg max
    attribute C levels low high agg sum
    attribute P levels low mid high agg sum temporal

    interval Y1 0 12
      range A 0 95 101
      range C 0 50 101
      range P 0 500 1000 5000
      cpt A: high > low
      cpt C | A=high: high > low
      cpt C | A=low: low > high
      cpt P | N=true: high ~ mid > low
      cpt P | N=false: high > mid > low

Ranges list len(levels)+1 ascending breakpoints per attribute; range k is
half-open [b_k, b_{k+1}), the last range closed at the top.  CPT statements
order levels with `>` (strict) and `~` (tie); conditions name parent values
(`A=high`, `N=true`) and must cover every parent instantiation.  `#` starts a
comment.  Parse and validation errors name the offending line and block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .cpnet import (
    MAX,
    SUM,
    AttributeDef,
    CPNet,
    CPT,
    CPTRow,
    Interval,
    Schema,
    SemanticTable,
    TempCPNet,
)
from .errors import ModelError


@dataclass
class _CptLine:
    attribute: str
    parents: tuple[str, ...]
    parent_values: tuple
    groups: tuple[tuple[str, ...], ...]  # level names; ordinals resolved later
    line: int


@dataclass
class _IntervalBlock:
    name: str
    start: int
    end: int
    line: int
    ranges: dict[str, tuple[float, ...]] = field(default_factory=dict)
    cpt_lines: list[_CptLine] = field(default_factory=list)


def load_tempcp(text: str, name: str = "model") -> TempCPNet:
    """Parse a model document into a validated TempCPNet."""
    attributes: list[AttributeDef] = []
    decisions: list[str] = []
    blocks: list[_IntervalBlock] = []
    model_name = name
    current: _IntervalBlock | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split(None, 1)[0]
        block_name = current.name if current else None
        try:
            if head == "model":
                model_name = _one_arg(line)
            elif head == "decision":
                decisions.append(_one_arg(line))
            elif head == "attribute":
                if current is not None:
                    raise ModelError("attribute declarations must precede interval blocks")
                attributes.append(_parse_attribute(line))
            elif head == "interval":
                current = _parse_interval(line, lineno)
                blocks.append(current)
                block_name = current.name
            elif head == "range":
                if current is None:
                    raise ModelError("'range' outside an interval block")
                attr, bounds = _parse_range(line)
                if attr in current.ranges:
                    raise ModelError(f"duplicate range for attribute '{attr}'")
                current.ranges[attr] = bounds
            elif head == "cpt":
                if current is None:
                    raise ModelError("'cpt' outside an interval block")
                current.cpt_lines.append(_parse_cpt(line, lineno))
            else:
                raise ModelError(f"unknown directive '{head}'")
        except ModelError as exc:
            if exc.line is None:
                raise ModelError(str(exc.args[0]).split(" [")[0], line=lineno, block=block_name) from None
            raise

    if not attributes:
        raise ModelError("model declares no attributes")
    if not blocks:
        raise ModelError("model declares no intervals")

    schema = Schema(attributes=tuple(attributes), decisions=tuple(decisions))
    intervals: list[Interval] = []
    nets: list[CPNet] = []
    tables: list[SemanticTable] = []
    for block in blocks:
        try:
            intervals.append(Interval(name=block.name, start=block.start, end=block.end))
            tables.append(SemanticTable(schema, block.ranges))
            nets.append(_build_net(schema, block))
        except ModelError as exc:
            if exc.block is None:
                raise ModelError(str(exc.args[0]), line=exc.line or block.line, block=block.name) from None
            raise
    return TempCPNet(schema=schema, intervals=intervals, nets=nets, tables=tables, name=model_name)


def load_tempcp_path(path: str | Path) -> TempCPNet:
    p = Path(path)
    return load_tempcp(p.read_text(), name=p.stem)


def _one_arg(line: str) -> str:
    parts = line.split()
    if len(parts) != 2:
        raise ModelError(f"'{parts[0]}' takes exactly one argument")
    return parts[1]


def _parse_attribute(line: str) -> AttributeDef:
    parts = line.split()
    if len(parts) < 3 or parts[2] != "levels":
        raise ModelError("expected 'attribute NAME levels L1 L2 ... [agg sum|max] [temporal]'")
    name = parts[1]
    levels: list[str] = []
    combine = SUM
    temporal = False
    i = 3
    while i < len(parts) and parts[i] not in ("agg", "temporal"):
        levels.append(parts[i])
        i += 1
    while i < len(parts):
        if parts[i] == "agg":
            if i + 1 >= len(parts) or parts[i + 1] not in (SUM, MAX):
                raise ModelError(f"attribute '{name}': 'agg' needs 'sum' or 'max'")
            combine = parts[i + 1]
            i += 2
        elif parts[i] == "temporal":
            temporal = True
            i += 1
        else:
            raise ModelError(f"attribute '{name}': unexpected token '{parts[i]}'")
    return AttributeDef(name=name, levels=tuple(levels), combine=combine, temporal=temporal)


def _parse_interval(line: str, lineno: int) -> _IntervalBlock:
    parts = line.split()
    if len(parts) != 4:
        raise ModelError("expected 'interval NAME START END'")
    try:
        start, end = int(parts[2]), int(parts[3])
    except ValueError:
        raise ModelError("interval bounds must be integers") from None
    return _IntervalBlock(name=parts[1], start=start, end=end, line=lineno)


def _parse_range(line: str) -> tuple[str, tuple[float, ...]]:
    parts = line.split()
    if len(parts) < 4:
        raise ModelError("expected 'range ATTR b0 b1 ... bn'")
    try:
        bounds = tuple(float(x) for x in parts[2:])
    except ValueError:
        raise ModelError("range breakpoints must be numbers") from None
    return parts[1], bounds


def _parse_cpt(line: str, lineno: int) -> _CptLine:
    body = line[len("cpt") :].strip()
    if ":" not in body:
        raise ModelError("cpt statement needs ':' before the preference order")
    lhs, order = body.split(":", 1)
    lhs = lhs.strip()
    if "|" in lhs:
        attr, cond = (s.strip() for s in lhs.split("|", 1))
        parents: list[str] = []
        values: list[str] = []
        for clause in cond.replace(",", " ").split():
            if "=" not in clause:
                raise ModelError(f"condition '{clause}' must look like VAR=value")
            var, val = clause.split("=", 1)
            parents.append(var.strip())
            values.append(val.strip())
    else:
        attr, parents, values = lhs, [], []
    if not attr:
        raise ModelError("cpt statement names no attribute")
    groups: list[tuple[str, ...]] = []
    for part in order.split(">"):
        members = tuple(s.strip() for s in part.split("~") if s.strip())
        if not members:
            raise ModelError("empty preference group in cpt statement")
        groups.append(members)
    return _CptLine(
        attribute=attr,
        parents=tuple(parents),
        parent_values=tuple(values),
        groups=tuple(groups),
        line=lineno,
    )


def _build_net(schema: Schema, block: _IntervalBlock) -> CPNet:
    by_attr: dict[str, list[_CptLine]] = {}
    for cl in block.cpt_lines:
        by_attr.setdefault(cl.attribute, []).append(cl)
    cpts: list[CPT] = []
    decision_names = set(schema.decisions)
    for attr_name, lines in by_attr.items():
        parents = lines[0].parents
        rows: dict[tuple, CPTRow] = {}
        for cl in lines:
            if cl.parents != parents:
                raise ModelError(
                    f"CPT for '{attr_name}' mixes parent sets {parents} and {cl.parents}",
                    line=cl.line,
                    block=block.name,
                )
            key = []
            for var, val in zip(cl.parents, cl.parent_values):
                if var in decision_names:
                    if val not in ("true", "false"):
                        raise ModelError(
                            f"decision '{var}' takes true/false, got '{val}'",
                            line=cl.line,
                            block=block.name,
                        )
                    key.append(val == "true")
                else:
                    key.append(schema.attribute(var).ordinal(val))
            key_t = tuple(key)
            if key_t in rows:
                raise ModelError(
                    f"duplicate CPT row for '{attr_name}' with parents {cl.parent_values}",
                    line=cl.line,
                    block=block.name,
                )
            attr = schema.attribute(attr_name)
            rows[key_t] = CPTRow(
                groups=tuple(tuple(attr.ordinal(lv) for lv in g) for g in cl.groups)
            )
        cpts.append(CPT(attribute=attr_name, parents=parents, rows=rows))
    return CPNet(schema, cpts)
