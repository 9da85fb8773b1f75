import os
import json
import enum
import hashlib
import multiprocessing
import numpy as np
import pandas as pd
from types import SimpleNamespace

## ---------- MAGIC NUMBERS ---------- ##

# threshold between the super- and
# subconformal decay regimes
SUPER_THRESHOLD = (1 + np.sqrt(17)) / 2
# energy-subcritical power range
P_MIN, P_MAX = 1.0, 5.0
# hyperboloid radius and time shift
R_STAR = 5 / 6
T_SHIFT = 3.0
# default Gauss-Legendre order for
# sphere and cone quadratures
QUAD_ORDER = 64
# endpoint refinement of sphere integrals
ENDPOINT_LEVELS = 12
ENDPOINT_RATIO = 1e3
# decay fits drop samples below this
FIT_FLOOR = 1e-10
FIT_MIN_SAMPLES = 50
FIT_MAX_RESIDUAL = 0.5
# identity residual floor, per grid cell
RESIDUAL_FLOOR = 1e-14
# compact-cone nonlinearity ceiling
LAMBDA_CEILING = 1e8
# snapshot binary format
SNAPSHOT_MAGIC = b'NLWD'
FORMAT_VERSION = 1
# set in the upper 16 bits of the version
# word for fields on image-cone coordinates
IMAGE_FLAG = 1 << 16
# fixed float format keeps reports byte-stable
FLOAT_FORMAT = '%.10e'

## ---------- Paths to important directories ---------- ##

paths = SimpleNamespace(
    RUNS='./nlw_runs/',
    VERIFY='./nlw_runs/verify/',
    CONFIGS='./configs/',
    DOCS='./docs/')

## ---------- Base class for function type checking enum ---------- ##

# enums whose values are callables.
# only dot operator and bracket
# operator work. Parens operator will fail
class FuncEnum(enum.Enum):
    # can't pass kwargs
    def __call__(self, *args):
        return self.value(*args)

# overrides uniterpretable error
# messages for missing dot or
# bracket operators
class MetaEnum(enum.EnumMeta):
    def __getitem__(cls, name):
        # keying in with a member ie Enum.Type1
        if name in cls._member_map_.values():
            return name
        # keying in with member name, config
        # files spell them lowercase and hyphenated
        key = name.upper().replace('-', '_') if isinstance(name, str) else name
        if key in cls._member_map_.keys():
            return cls._member_map_[key]
        raise ValueError("%r is not a valid %s" % (name, cls.__qualname__))
    def __getattr__(cls, name):
        if name.startswith('__') and name.endswith('__'):
            raise AttributeError(name)
        if name in cls._member_map_.keys():
            return cls._member_map_[name]
        else:
            raise ValueError("%r is not a valid %s" % (name, cls.__qualname__))
    def valid(self):
        return self._member_names_

## ---------- Errors ---------- ##

class ConfigError(ValueError):
    # carries every violation found so
    # a config is fixed in one pass
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))

class BlowupError(FloatingPointError):
    def __init__(self, t, where):
        self.t = t
        super().__init__(f"non-finite field at t={t:.6g} ({where}); the defocusing scheme should never blow up")

class DivergenceError(ValueError):
    pass

class TruncationError(RuntimeError):
    def __init__(self, t, coefficient):
        self.t = t
        self.coefficient = coefficient
        super().__init__(f"compact-cone coefficient {coefficient:.3g} exceeds the ceiling at t={t:.6g}")

## ---------- Helper methods ---------- ##

def check_violations(violations):
    if len(violations) > 0:
        raise ConfigError(violations)

def partition(lst, n):
    # split lst into n nearly equal, contiguous chunks
    division = len(lst) / float(n)
    return [lst[int(round(division * i)): int(round(division * (i + 1)))] for i in range(n)]

def config_hash(cfg_dict):
    blob = json.dumps(cfg_dict, sort_keys=True, default=str).encode()
    return hashlib.sha1(blob).hexdigest()[:12]

def write_json(obj, path):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=str)

def read_json(path):
    with open(path, 'r') as f:
        return json.load(f)

def write_csv(rows, path, columns=None):
    # rows: list of dicts or a DataFrame
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return df

def _run_indexed(fn, chunk):
    return [(i, fn(*args)) for i, args in chunk]

def fan_out(fn, arglists, jobs=None):
    # fn(*args) for each args in arglists, results in input order.
    # jobs None or 1 runs serially, 0 means all cores. fn must be
    # a module-level function so the pool can pickle it
    arglists = list(arglists)
    if jobs is None or len(arglists) <= 1:
        return [fn(*args) for args in arglists]
    if jobs < 0:
        raise ValueError(f"jobs={jobs} must be nonnegative (0 means all cores)")
    jobs = min(jobs or multiprocessing.cpu_count(), len(arglists))
    if jobs <= 1:
        return [fn(*args) for args in arglists]
    chunks = [c for c in partition(list(enumerate(arglists)), jobs) if len(c) > 0]
    pool = multiprocessing.Pool(jobs)
    res_async = [pool.apply_async(_run_indexed, args=(fn, chunk)) for chunk in chunks]
    done = [pair for r in res_async for pair in r.get()]
    pool.close()
    pool.join()
    return [res for _, res in sorted(done, key=lambda pair: pair[0])]
