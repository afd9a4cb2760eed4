"""
Excel File Handler
Reads and writes causal datasets stored in .xlsx workbooks.
"""

import json
import logging
import os
from typing import Union

import pandas as pd

from src.models.csv_handler import CSVHandler
from src.models.schema import CausalDataset, CausalSchema
from src.utils.errors import DataError

logger = logging.getLogger(__name__)

EXCEL_EXTENSIONS = {".xlsx", ".xlsm"}
CSV_EXTENSIONS = {".csv"}


class ExcelHandler:
    """Handler for Excel/XLSX data files."""

    def __init__(self, sheet_name: Union[int, str] = 0):
        self.sheet_name = sheet_name

    def read_dataset(self, excel_path: str, schema: CausalSchema) -> CausalDataset:
        """Read a worksheet and validate it against the schema.

        Args:
            excel_path: Path to the workbook
            schema: Declared causal schema

        Returns:
            CausalDataset: The validated dataset
        """
        logger.info("Reading Excel file: %s", excel_path)
        try:
            raw = pd.read_excel(excel_path, sheet_name=self.sheet_name, dtype=str,
                                keep_default_na=False, engine="openpyxl")
        except FileNotFoundError:
            raise DataError(f"Excel file not found: {excel_path}")
        except PermissionError:
            raise DataError(f"Permission denied when reading Excel: {excel_path}")
        except (ValueError, KeyError) as e:
            raise DataError(f"Error reading Excel file {excel_path}: {e}")
        raw.columns = [str(c).strip() for c in raw.columns]
        try:
            return CausalDataset.from_text_frame(raw, schema, row_offset=2)
        except DataError as e:
            raise e.add_context(os.path.basename(excel_path))

    def save_dataset(self, dataset: CausalDataset, output_path: str):
        """Write the data sheet plus a sheet holding the schema as JSON.

        Args:
            dataset: Dataset to save
            output_path: Destination .xlsx path
        """
        logger.info("Saving dataset to: %s", output_path)
        try:
            with pd.ExcelWriter(output_path, engine="openpyxl") as writer:
                dataset.to_frame().to_excel(writer, sheet_name="Data", index=False)
                schema_rows = pd.DataFrame({"Schema": [json.dumps(dataset.schema.to_dict())]})
                schema_rows.to_excel(writer, sheet_name="Schema", index=False)
        except PermissionError:
            raise DataError(f"Permission denied when writing to: {output_path}")
        except OSError as e:
            raise DataError(f"Unable to write to {output_path}: {e}")


def load_table(path: str, schema: CausalSchema) -> CausalDataset:
    """Load a dataset from a .csv or .xlsx file, chosen by extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext in EXCEL_EXTENSIONS:
        return ExcelHandler().read_dataset(path, schema)
    if ext in CSV_EXTENSIONS:
        return CSVHandler().read_dataset(path, schema)
    raise DataError(f"Unsupported data file type '{ext}': {path}")
