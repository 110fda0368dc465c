"""Fixed-format MPS export (and a reader for the same dialect).

Layout of every data line (1-based columns)::

    2-3    field 1  row type / bound type
    5-12   field 2  name
    15-22  field 3  name
    25-36  field 4  number
    40-47  field 5  name
    50-61  field 6  number

Variables are named ``C0000001..``, rows ``R0000001..``, the objective ``OBJ``.
Numbers are written with the most significant digits that fit in 12
characters. Maximization is declared with an ``OBJSENSE``/``MAX`` section.
Binaries sit between ``MARKER INTORG``/``INTEND`` lines and get explicit
``UP 1`` bounds. Infinite bounds use ``FR``/``MI``/``PL``.
"""

from __future__ import annotations

import numpy as np

from .model import LinearProgram, MilpModel

_SENSE_CODE = {"<": "L", ">": "G", "=": "E"}
_CODE_SENSE = {v: k for k, v in _SENSE_CODE.items()}


def format_number(value: float) -> str:
    value = float(value)
    if value == int(value) and abs(value) < 1e11:
        return str(int(value))
    for digits in range(12, 0, -1):
        text = f"{value:.{digits}g}"
        if len(text) <= 12:
            return text
    raise ValueError(f"cannot fit {value!r} in 12 characters")


def _line(f1="", f2="", f3="", f4="", f5="", f6="") -> str:
    text = f" {f1:<2} {f2:<8}  {f3:<8}  {f4:>12}"
    if f5:
        text += f"   {f5:<8}  {f6:>12}"
    return text.rstrip()


def export_mps(model: MilpModel | LinearProgram, name: str = "MODEL") -> str:
    if isinstance(model, LinearProgram):
        model = MilpModel(model)
    lp = model.lp
    is_bin = np.zeros(lp.n_vars, dtype=bool)
    is_bin[model.binaries] = True
    var = [f"C{j + 1:07d}" for j in range(lp.n_vars)]
    row = [f"R{i + 1:07d}" for i in range(lp.n_rows)]

    out = [f"NAME          {name}"]
    if lp.maximize:
        out += ["OBJSENSE", "    MAX"]
    out.append("ROWS")
    out.append(_line("N", "OBJ"))
    for i in range(lp.n_rows):
        out.append(_line(_SENSE_CODE[lp.senses[i]], row[i]))

    out.append("COLUMNS")
    in_int = False
    marker = 0
    for j in range(lp.n_vars):
        if is_bin[j] != in_int:
            kind = "'INTORG'" if is_bin[j] else "'INTEND'"
            out.append(f"    M{marker:07d}  'MARKER'                 {kind}")
            marker += 1
            in_int = bool(is_bin[j])
        entries = []
        if lp.c[j] != 0.0:
            entries.append(("OBJ", lp.c[j]))
        for i in np.flatnonzero(lp.A[:, j]):
            entries.append((row[i], lp.A[i, j]))
        if not entries:
            entries.append(("OBJ", 0.0))
        for k in range(0, len(entries), 2):
            pair = entries[k : k + 2]
            f5, f6 = (pair[1][0], format_number(pair[1][1])) if len(pair) == 2 else ("", "")
            out.append(_line("", var[j], pair[0][0], format_number(pair[0][1]), f5, f6))
    if in_int:
        out.append(f"    M{marker:07d}  'MARKER'                 'INTEND'")

    out.append("RHS")
    rhs = [(row[i], lp.b[i]) for i in range(lp.n_rows) if lp.b[i] != 0.0]
    for k in range(0, len(rhs), 2):
        pair = rhs[k : k + 2]
        f5, f6 = (pair[1][0], format_number(pair[1][1])) if len(pair) == 2 else ("", "")
        out.append(_line("", "RHS", pair[0][0], format_number(pair[0][1]), f5, f6))

    out.append("BOUNDS")
    for j in range(lp.n_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            out.append(_line("FX", "BND", var[j], format_number(lo)))
            continue
        if np.isinf(lo) and np.isinf(hi):
            out.append(_line("FR", "BND", var[j]))
            continue
        if np.isinf(lo):
            out.append(_line("MI", "BND", var[j]))
        elif lo != 0.0 or is_bin[j]:
            out.append(_line("LO", "BND", var[j], format_number(lo)))
        if np.isinf(hi):
            if is_bin[j]:
                out.append(_line("PL", "BND", var[j]))
        else:
            out.append(_line("UP", "BND", var[j], format_number(hi)))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def read_mps(text: str) -> MilpModel:
    """Parse MPS written by :func:`export_mps` (whitespace-separated fields)."""
    section = None
    maximize = False
    row_names: list[str] = []
    row_sense: dict[str, str] = {}
    obj_name = None
    var_index: dict[str, int] = {}
    coeffs: dict[tuple[str, str], float] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, list[float]] = {}
    binaries: set[str] = set()
    in_int = False
    for raw in text.splitlines():
        if not raw.strip() or raw.startswith("*"):
            continue
        tokens = raw.split()
        if not raw[0].isspace():
            section = tokens[0]
            if section == "ENDATA":
                break
            continue
        if section == "OBJSENSE":
            maximize = tokens[0].upper() in ("MAX", "MAXIMIZE")
        elif section == "ROWS":
            code, name = tokens
            if code == "N":
                obj_name = obj_name or name
            else:
                row_names.append(name)
                row_sense[name] = _CODE_SENSE[code]
        elif section == "COLUMNS":
            if len(tokens) >= 3 and tokens[1] == "'MARKER'":
                in_int = tokens[2] == "'INTORG'"
                continue
            var = tokens[0]
            if var not in var_index:
                var_index[var] = len(var_index)
                bounds[var] = [0.0, np.inf]
            if in_int:
                binaries.add(var)
            for k in range(1, len(tokens), 2):
                coeffs[(tokens[k], var)] = float(tokens[k + 1])
        elif section == "RHS":
            for k in range(1, len(tokens), 2):
                rhs[tokens[k]] = float(tokens[k + 1])
        elif section == "BOUNDS":
            code, var = tokens[0], tokens[2]
            value = float(tokens[3]) if len(tokens) > 3 else None
            bnd = bounds[var]
            if code == "UP":
                bnd[1] = value
            elif code == "LO":
                bnd[0] = value
            elif code == "FX":
                bnd[0] = bnd[1] = value
            elif code == "FR":
                bnd[0], bnd[1] = -np.inf, np.inf
            elif code == "MI":
                bnd[0] = -np.inf
            elif code == "PL":
                bnd[1] = np.inf
            elif code == "BV":
                bnd[0], bnd[1] = 0.0, 1.0
                binaries.add(var)
            else:
                raise ValueError(f"unsupported bound type {code}")
        else:
            raise ValueError(f"unsupported MPS section {section}")

    n = len(var_index)
    rows = {name: i for i, name in enumerate(row_names)}
    c = np.zeros(n)
    A = np.zeros((len(row_names), n))
    for (r, v), value in coeffs.items():
        if r == obj_name:
            c[var_index[v]] = value
        else:
            A[rows[r], var_index[v]] = value
    b = np.array([rhs.get(name, 0.0) for name in row_names])
    senses = np.array([row_sense[name] for name in row_names], dtype="<U1")
    order = sorted(var_index, key=var_index.get)
    lb = np.array([bounds[v][0] for v in order])
    ub = np.array([bounds[v][1] for v in order])
    lp = LinearProgram(c, A, senses, b, lb, ub, maximize=maximize)
    return MilpModel(lp, np.array(sorted(var_index[v] for v in binaries), dtype=int))
