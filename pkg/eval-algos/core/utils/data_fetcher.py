import argparse
import io
import logging
import os
import sys
from typing import List, Optional

import pandas as pd
import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry
from dotenv import load_dotenv

from .config import ADULT_FILENAME, get_data_dir
from .errors import DataError, RiskAdvisorError
from .serialize import write_frame


ADULT_BASE_URL = 'https://archive.ics.uci.edu/ml/machine-learning-databases/adult'
ADULT_FILES = ('adult.data', 'adult.test')
ADULT_COLUMNS = [
    'age', 'workclass', 'fnlwgt', 'education', 'education_num', 'marital_status',
    'occupation', 'relationship', 'race', 'sex', 'capital_gain', 'capital_loss',
    'hours_per_week', 'native_country', 'income',
]
ADULT_LABEL_COLUMN = 'income'
MISSING_MARKER = '?'
REQUEST_TIMEOUT = 60


def make_session() -> requests.Session:
    """Create a requests session with retry logic."""
    session = requests.Session()
    retry = Retry(
        total=3,
        backoff_factor=0.3,
        status_forcelist=[429, 500, 502, 503, 504],
        allowed_methods=["GET"]
    )
    session.mount('https://', HTTPAdapter(max_retries=retry))
    session.mount('http://', HTTPAdapter(max_retries=retry))
    return session


def parse_adult(text: str) -> pd.DataFrame:
    """
    Parses one raw Census Income file. Rows with a missing ('?') cell are
    dropped and the trailing '.' on test-file labels is removed.
    """
    df = pd.read_csv(io.StringIO(text), header=None, names=ADULT_COLUMNS, dtype=str,
                     skipinitialspace=True, comment='|', skip_blank_lines=True)
    df = df.apply(lambda s: s.str.strip())
    df = df.dropna()
    df = df[~(df == MISSING_MARKER).any(axis=1)]
    df[ADULT_LABEL_COLUMN] = df[ADULT_LABEL_COLUMN].str.rstrip('.')
    return df.reset_index(drop=True)


def fetch_adult(output_path: Optional[str] = None, force: bool = False,
                session: Optional[requests.Session] = None) -> str:
    """
    Downloads the Census Income training and test files and writes them as a
    single headed CSV with label column 'income'.

    Args:
        output_path: Destination; defaults to <data dir>/adult.csv.
        force: Re-download even if the file exists.
        session: Optional session (a retrying one is created otherwise).

    Returns:
        str: Path of the CSV.
    """
    load_dotenv()
    output_path = output_path or os.path.join(get_data_dir(), ADULT_FILENAME)
    if os.path.exists(output_path) and not force:
        logging.info(f"{output_path} already exists; skipping download")
        return output_path

    session = session or make_session()
    frames: List[pd.DataFrame] = []
    for filename in ADULT_FILES:
        url = f"{ADULT_BASE_URL}/{filename}"
        logging.info(f"Downloading {url}")
        response = session.get(url, timeout=REQUEST_TIMEOUT)
        response.raise_for_status()
        frames.append(parse_adult(response.text))

    df = pd.concat(frames, ignore_index=True)
    if df.empty:
        raise DataError("Downloaded Census Income files contain no complete rows")
    write_frame(df, output_path)
    print(f"✓ Saved {len(df)} rows to {output_path}")
    return output_path


def main():
    parser = argparse.ArgumentParser(description='Download the Census Income (Adult) dataset as a headed CSV')
    parser.add_argument('--output', '-o', type=str, default=None,
                        help='Output CSV path (default: $RISK_ADVISOR_DATA_DIR/adult.csv)')
    parser.add_argument('--force', '-f', action='store_true', help='Download even if the file exists')
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s',
                        handlers=[logging.StreamHandler()])
    try:
        fetch_adult(args.output, args.force)
    except (RiskAdvisorError, requests.RequestException) as e:
        print(f"Error: {str(e)}")
        sys.exit(1)


if __name__ == "__main__":
    main()
