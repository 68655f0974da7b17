"""Convert the UCI Online Retail II workbook (both yearly sheets) into the CSV layout ingest reads.

    python3 scripts/convert_online_retail.py online_retail_II.xlsx data/online_retail_II.csv

Needs openpyxl (pip install 'retail-marl[xlsx]').
"""

import argparse
from pathlib import Path

import pandas as pd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("xlsx", type=Path)
    ap.add_argument("out", type=Path)
    args = ap.parse_args()
    sheets = pd.read_excel(args.xlsx, sheet_name=None, dtype={"Invoice": str, "StockCode": str})
    df = pd.concat(sheets.values(), ignore_index=True)
    df["Customer ID"] = df["Customer ID"].astype("Int64")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(args.out, index=False, date_format="%Y-%m-%d %H:%M:%S")
    print(f"wrote {len(df)} rows from {len(sheets)} sheet(s) to {args.out}")


if __name__ == "__main__":
    main()
