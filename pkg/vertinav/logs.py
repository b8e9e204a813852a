"""CSV sensor logs and run outputs.

Every table is a UTF-8 CSV with a header row and ``\\n`` line endings.
Floats are written with full precision and read back with the round-trip
parser, so a replayed log holds exactly the values that were simulated.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from vertinav.errors import LogFormatError

logger = logging.getLogger(__name__)


class TableSchema(BaseModel):
    """Columns of one CSV table."""
    model_config = ConfigDict(frozen=True)

    filename: str
    columns: List[str]
    text_columns: List[str] = Field(default_factory=list)
    integer_columns: List[str] = Field(default_factory=list)
    nullable_columns: List[str] = Field(default_factory=list)
    required: bool = True


SCHEMAS: Dict[str, TableSchema] = {
    "imu": TableSchema(filename="imu.csv", columns=["t", "fx", "fy", "fz", "wx", "wy", "wz"]),
    "gnss_obs": TableSchema(
        filename="gnss_obs.csv",
        columns=["t", "sat_id", "sx", "sy", "sz", "pr", "cp", "cn0", "lli"],
        text_columns=["sat_id"],
        integer_columns=["lli"],
    ),
    "corrections": TableSchema(
        filename="corrections.csv",
        columns=["t", "sat_id", "prc", "usable"],
        text_columns=["sat_id"],
        integer_columns=["usable"],
    ),
    "baro": TableSchema(filename="baro.csv", columns=["t", "pressure_pa"]),
    "ground_weather": TableSchema(
        filename="ground_weather.csv", columns=["timestamp", "pressure_pa", "temperature_k"]
    ),
    "corners": TableSchema(
        filename="corners.csv",
        columns=["t", "marker_id", "corner", "u", "v", "sigma_px"],
        integer_columns=["marker_id", "corner"],
        required=False,
    ),
    "markers": TableSchema(
        filename="markers.csv",
        columns=["id", "side_m", "cx", "cy", "cz", "yaw_deg"],
        integer_columns=["id"],
        required=False,
    ),
    "spectrum": TableSchema(
        filename="spectrum.csv", columns=["t", "band", "power"], integer_columns=["band"], required=False
    ),
    "truth": TableSchema(
        filename="truth.csv",
        columns=["t", "e", "n", "u", "ve", "vn", "vu", "roll", "pitch", "yaw"],
        required=False,
    ),
}

OUTPUT_SCHEMAS: Dict[str, TableSchema] = {
    "fused": TableSchema(
        filename="fused.csv",
        columns=["t", "e", "n", "u", "ve", "vn", "vu", "roll", "pitch", "yaw", "sigma_e", "sigma_n", "sigma_u"],
    ),
    "integrity": TableSchema(
        filename="integrity.csv",
        columns=["t", "hpl", "vpl", "hal", "val", "state", "events"],
        text_columns=["state", "events"],
        nullable_columns=["hpl", "vpl"],
    ),
    "gnss_pl": TableSchema(
        filename="gnss_pl.csv",
        columns=["t", "e", "n", "u", "hpl", "vpl", "sats"],
        integer_columns=["sats"],
    ),
    "pe_pl": TableSchema(
        filename="pe_pl.csv",
        columns=["t", "hpe", "vpe", "hpl", "vpl", "state"],
        text_columns=["state"],
        nullable_columns=["hpl", "vpl"],
        required=False,
    ),
}

SENSOR_STREAMS = tuple(SCHEMAS)


def empty_table(schema: TableSchema) -> pd.DataFrame:
    return pd.DataFrame({c: pd.Series(dtype=_dtype(schema, c)) for c in schema.columns})


def _dtype(schema: TableSchema, column: str) -> str:
    if column in schema.text_columns:
        return "object"
    if column in schema.integer_columns:
        return "int64"
    return "float64"


class SensorLogs(BaseModel):
    """Multi-rate sensor record of one flight, one table per stream."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    imu: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["imu"]))
    gnss_obs: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["gnss_obs"]))
    corrections: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["corrections"]))
    baro: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["baro"]))
    ground_weather: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["ground_weather"]))
    corners: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["corners"]))
    markers: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["markers"]))
    spectrum: pd.DataFrame = Field(default_factory=lambda: empty_table(SCHEMAS["spectrum"]))
    truth: Optional[pd.DataFrame] = None

    def copy_streams(self) -> "SensorLogs":
        """Deep copy of every table."""
        update = {name: getattr(self, name).copy() for name in SENSOR_STREAMS if getattr(self, name) is not None}
        return self.model_copy(update=update)


def write_table(df: pd.DataFrame, path: Path, schema: TableSchema) -> Path:
    """Write ``df`` with the schema's column order."""
    missing = [c for c in schema.columns if c not in df.columns]
    if missing:
        raise LogFormatError(f"table lacks columns {missing}", str(path))
    df.loc[:, schema.columns].to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def read_table(path: Path, schema: TableSchema) -> pd.DataFrame:
    """Read and validate one table.

    Raises:
        LogFormatError: Unreadable file, missing column or malformed row
            (rows are numbered from 1 after the header)
    """
    dtypes = {c: str for c in schema.text_columns}
    try:
        df = pd.read_csv(path, dtype=dtypes, float_precision="round_trip", keep_default_na=False, na_values=[""])
    except pd.errors.ParserError as e:
        raise LogFormatError(f"malformed CSV: {e}", str(path)) from e
    except pd.errors.EmptyDataError as e:
        raise LogFormatError("file is empty", str(path)) from e

    missing = [c for c in schema.columns if c not in df.columns]
    if missing:
        raise LogFormatError(f"missing columns {missing}", str(path))

    df = df.loc[:, schema.columns].copy()
    for column in schema.columns:
        if column in schema.text_columns:
            continue
        values = pd.to_numeric(df[column], errors="coerce")
        bad = values.isna()
        if column in schema.nullable_columns:
            bad &= df[column].notna()
        if bad.any():
            row = int(bad.to_numpy().argmax()) + 1
            raise LogFormatError(f"column '{column}' holds no number", str(path), row)
        df[column] = values.astype("int64") if column in schema.integer_columns else values.astype("float64")
    for column in schema.text_columns:
        if column == "events":
            df[column] = df[column].fillna("")
            continue
        bad = df[column].isna()
        if bad.any():
            raise LogFormatError(f"column '{column}' is empty", str(path), int(bad.to_numpy().argmax()) + 1)
    return df


def write_logs(logs: SensorLogs, directory: Path) -> List[Path]:
    """Write every non-empty stream (required streams always) into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, schema in SCHEMAS.items():
        df = getattr(logs, name)
        if df is None or (df.empty and not schema.required):
            continue
        written.append(write_table(df, directory / schema.filename, schema))
    logger.debug(f"Wrote {len(written)} log tables to {directory}")
    return written


def read_logs(directory: Path) -> SensorLogs:
    """Load a log directory; optional streams default to empty tables.

    Raises:
        LogFormatError: Missing required stream or malformed table
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise LogFormatError("log directory not found", str(directory))
    tables = {}
    for name, schema in SCHEMAS.items():
        path = directory / schema.filename
        if path.is_file():
            tables[name] = read_table(path, schema)
        elif schema.required:
            raise LogFormatError(f"required stream '{name}' is missing", str(path))
        elif name != "truth":
            logger.info(f"Stream '{name}' absent in {directory}")
    return SensorLogs(**tables)


def write_outputs(tables: Dict[str, pd.DataFrame], directory: Path) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [
        write_table(df, directory / OUTPUT_SCHEMAS[name].filename, OUTPUT_SCHEMAS[name])
        for name, df in tables.items()
        if df is not None
    ]


def read_output(directory: Path, name: str) -> pd.DataFrame:
    schema = OUTPUT_SCHEMAS[name]
    path = Path(directory) / schema.filename
    if not path.is_file():
        raise LogFormatError(f"output '{name}' is missing", str(path))
    return read_table(path, schema)


def records_table(records: Iterable[BaseModel]) -> pd.DataFrame:
    """One row per pydantic record, in field order."""
    return pd.DataFrame([r.model_dump(mode="json") for r in records])


def write_records(records: Iterable[BaseModel], path: Path) -> Path:
    df = records_table(records)
    df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return Path(path)
