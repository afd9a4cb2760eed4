"""
CSV File Handler
Reads and writes causal datasets as UTF-8, comma-separated files with a header row.
"""

import logging
import os

import pandas as pd

from src.models.schema import CausalDataset, CausalSchema
from src.utils.errors import DataError

logger = logging.getLogger(__name__)


class CSVHandler:
    """Handler for CSV data files."""

    def __init__(self, encoding: str = "utf-8"):
        self.encoding = encoding

    def read_dataset(self, csv_path: str, schema: CausalSchema) -> CausalDataset:
        """Read a CSV file and validate it against the schema.

        Column order is irrelevant and extra columns are ignored.

        Args:
            csv_path: Path to the CSV file to read
            schema: Declared causal schema

        Returns:
            CausalDataset: The validated dataset
        """
        logger.info("Reading CSV file: %s", csv_path)
        try:
            raw = pd.read_csv(csv_path, sep=",", dtype=str, keep_default_na=False,
                              encoding=self.encoding, skipinitialspace=True)
        except FileNotFoundError:
            raise DataError(f"CSV file not found: {csv_path}")
        except PermissionError:
            raise DataError(f"Permission denied when reading CSV: {csv_path}")
        except pd.errors.EmptyDataError:
            raise DataError(f"CSV file is empty: {csv_path}")
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise DataError(f"Error reading CSV file {csv_path}: {e}")
        raw.columns = [str(c).strip() for c in raw.columns]
        try:
            dataset = CausalDataset.from_text_frame(raw, schema, row_offset=2)
        except DataError as e:
            raise e.add_context(os.path.basename(csv_path))
        logger.debug("Loaded %d rows from %s", dataset.n, csv_path)
        return dataset

    def save_dataset(self, dataset: CausalDataset, output_path: str):
        """Write a dataset with its schema columns in causal order.

        Floats are written with the shortest repr that round-trips exactly.

        Args:
            dataset: Dataset to save
            output_path: Destination path
        """
        logger.info("Saving dataset to: %s", output_path)
        try:
            dataset.to_frame().to_csv(output_path, index=False, encoding=self.encoding,
                                      float_format=None, lineterminator="\n")
        except PermissionError:
            raise DataError(f"Permission denied when writing to: {output_path}")
        except OSError as e:
            raise DataError(f"Unable to write to {output_path}: {e}")


def load_csv(path: str, schema: CausalSchema) -> CausalDataset:
    """Load and validate a CSV dataset."""
    return CSVHandler().read_dataset(path, schema)


def write_csv(dataset: CausalDataset, path: str):
    """Write a dataset so that ``load_csv`` reads it back unchanged."""
    CSVHandler().save_dataset(dataset, path)
