import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from utils.errors import DataError

logger = logging.getLogger(__name__)


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    """Design matrix (rows are observations) plus response vector.

    When built from a standardized CSV, ``center``/``scale`` hold the covariate
    centering and scaling constants and ``response_center`` the response mean,
    so estimates can be mapped back with ``to_original_scale``.
    """

    design: np.ndarray
    response: np.ndarray
    column_names: tuple = None
    response_name: str = "y"
    center: np.ndarray = None
    scale: np.ndarray = None
    response_center: float = 0.0

    def __post_init__(self):
        design = np.asarray(self.design, dtype=np.float64)
        if design.ndim == 1:
            design = design.reshape(-1, 1)
        response = np.asarray(self.response, dtype=np.float64).reshape(-1)

        if design.ndim != 2:
            raise DataError(f"design must be a matrix, got {design.ndim} dimensions")
        n, p = design.shape
        if n < 2 or p < 1:
            raise DataError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
        if response.shape[0] != n:
            raise DataError(f"design has {n} rows but response has {response.shape[0]} entries")
        if not np.all(np.isfinite(design)):
            raise DataError("design contains non-finite entries")
        if not np.all(np.isfinite(response)):
            raise DataError("response contains non-finite entries")

        names = self.column_names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(p))
        names = tuple(str(name) for name in names)
        if len(names) != p:
            raise DataError(f"expected {p} column names, got {len(names)}")

        object.__setattr__(self, "design", _frozen(design))
        object.__setattr__(self, "response", _frozen(response))
        object.__setattr__(self, "column_names", names)
        if self.center is not None:
            object.__setattr__(self, "center", _frozen(self.center))
        if self.scale is not None:
            object.__setattr__(self, "scale", _frozen(self.scale))

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def p(self):
        return self.design.shape[1]

    @property
    def standardized(self):
        return self.scale is not None

    def permuted(self, order):
        """Same observations in a different row order"""
        order = np.asarray(order)
        return Dataset(self.design[order], self.response[order], self.column_names,
                       self.response_name, self.center, self.scale, self.response_center)

    def to_original_scale(self, values):
        """Map coefficients (vector or draws matrix) fitted on standardized columns back"""
        values = np.asarray(values, dtype=np.float64)
        if self.scale is None:
            return values
        return values / self.scale

    def standardization_constants(self):
        return {
            "columns": list(self.column_names),
            "center": None if self.center is None else self.center.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
            "response": self.response_name,
            "response_center": float(self.response_center),
        }


@dataclass(frozen=True)
class CoefficientVector:
    """Regression coefficients of length p"""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise DataError("coefficient vector contains non-finite entries")
        object.__setattr__(self, "values", _frozen(values))

    def __len__(self):
        return self.values.shape[0]

    @property
    def support_size(self):
        return int(np.count_nonzero(self.values))

    def check_dimension(self, p):
        if len(self) != p:
            raise DataError(f"coefficient vector has length {len(self)}, expected {p}")
        return self


@dataclass(frozen=True)
class CredibleInterval:
    lower: float
    upper: float
    level: float
    coefficient_index: int

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise DataError(f"level must lie in (0, 1), got {self.level}")
        if self.lower > self.upper:
            raise DataError(f"interval lower {self.lower} exceeds upper {self.upper}")
        if self.coefficient_index < 0:
            raise DataError(f"coefficient index must be >= 0, got {self.coefficient_index}")

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, value):
        return self.lower <= value <= self.upper


def gram_matrix(d):
    """(1/n) X'X"""
    X = d.design
    gram = X.T @ X / d.n
    # symmetric to the last bit
    return (gram + gram.T) / 2.0


class DataProcessor:
    def __init__(self, csv_path="dataset.csv", response_column=0, standardize=False):
        self.csv_path = Path(csv_path)
        self.response_column = response_column
        self.standardize = standardize

    def load_frame(self):
        """Read the CSV as strings so every cell can be checked"""
        if not self.csv_path.is_file():
            raise DataError(f"input file not found: {self.csv_path}")
        try:
            df = pd.read_csv(self.csv_path, dtype=str, keep_default_na=False,
                             encoding="utf-8", skipinitialspace=True)
        except pd.errors.ParserError as e:
            raise DataError(f"ragged rows in {self.csv_path}: {e}") from e
        except (pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            raise DataError(f"cannot parse {self.csv_path}: {e}") from e

        logger.info("Dataset loaded: %d records, %d columns", len(df), df.shape[1])
        return df

    def resolve_response_column(self, df):
        column = self.response_column
        if column in df.columns:
            return column
        if isinstance(column, str) and column.strip().lstrip("-").isdigit():
            column = int(column)
        if isinstance(column, int) and -df.shape[1] <= column < df.shape[1]:
            return df.columns[column]
        raise DataError(f"response column {self.response_column!r} not found; "
                        f"available: {list(df.columns)}")

    def to_numeric(self, df):
        """Convert every column to float64, naming the first offending cell"""
        # short rows read as NaN or '' depending on the pandas version
        blank = df.apply(lambda c: c.isna() | c.fillna("").astype(str).str.strip().eq("")).to_numpy()
        # a blank cell with only blanks to its right is a short row
        short = np.flip(np.cumprod(np.flip(blank, axis=1), axis=1), axis=1).astype(bool)
        numeric = {}
        for col_idx, name in enumerate(df.columns):
            raw = df[name]
            if blank[:, col_idx].any():
                row = int(np.flatnonzero(blank[:, col_idx])[0])
                kind = "ragged row" if short[row, col_idx] else "empty cell at row"
                raise DataError(f"{kind} {row + 1} (file line {row + 2}): "
                                f"missing value in column {col_idx + 1} ({name!r})")
            coerced = pd.to_numeric(raw, errors="coerce")
            bad = coerced.isna().to_numpy()
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise DataError(f"non-numeric cell {raw.iloc[row]!r} at row {row + 1} "
                                f"(file line {row + 2}), column {col_idx + 1} ({name!r})")
            # astype goes through float(), which rounds correctly
            numeric[name] = raw.str.strip().astype(np.float64)
        return pd.DataFrame(numeric, columns=df.columns)

    def load_dataset(self):
        """Load, validate and optionally standardize the CSV"""
        df = self.to_numeric(self.load_frame())
        response_name = self.resolve_response_column(df)

        covariates = df.drop(columns=[response_name])
        if covariates.shape[1] == 0:
            raise DataError("no covariate columns left after removing the response")

        X = covariates.to_numpy(dtype=np.float64)
        y = df[response_name].to_numpy(dtype=np.float64)

        if not self.standardize:
            return Dataset(X, y, tuple(covariates.columns), str(response_name))

        if X.shape[0] < 2:
            raise DataError("standardization needs at least two rows")
        center = X.mean(axis=0)
        scale = X.std(axis=0, ddof=1)
        flat = [str(name) for name, s in zip(covariates.columns, scale) if not s > 0.0]
        if flat:
            raise DataError(f"zero-variance column(s) cannot be standardized: {flat}")
        response_center = float(y.mean())
        logger.info("Standardized %d covariate columns", X.shape[1])
        return Dataset((X - center) / scale, y - response_center, tuple(covariates.columns),
                       str(response_name), center, scale, response_center)

    def validate_dataset(self, d):
        """Print a short profile of the dataset"""
        print(f"Observations: {d.n}")
        print(f"Covariates: {d.p}")
        print(f"Response: {d.response_name} (range {d.response.min():.4g} to {d.response.max():.4g})")
        print(f"Standardized: {'yes' if d.standardized else 'no'}")
        if d.p >= d.n:
            print("High-dimensional design (p >= n): direct inverse precision is unavailable")
        return True


def load_csv(path, response_column=0, standardize=False):
    return DataProcessor(path, response_column, standardize).load_dataset()


def export_csv(d, path):
    """Write the dataset back out, response first; values round-trip exactly"""
    frame = pd.DataFrame(d.design, columns=list(d.column_names))
    frame.insert(0, d.response_name, d.response)
    frame.to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def write_standardization_sidecar(d, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(d.standardization_constants(), f, indent=2)
    return Path(path)
