"""dBm <-> W conversions used at the API and CLI boundary."""
import numpy as np


def dbm_to_watt(p_dbm):
    """Convert power in dBm (relative to 1 mW) to watts."""
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(p_watt):
    return 10.0 * np.log10(np.asarray(p_watt, dtype=float)) + 30.0


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)
