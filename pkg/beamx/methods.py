import logging
from typing import List

available_solvers = [
    'wmmse',
    'pga',
    'mrt',
    'zf',
]

# solvers able to label each utility
solvers_for_utility = {
    'srm': ['wmmse', 'pga', 'mrt', 'zf'],
    'eem': ['pga', 'mrt', 'zf'],
    'mmr': ['pga', 'mrt', 'zf'],
}


def check_solver(solvers: List[str], utility: str = None) -> bool:
    """
    Check if the provided solvers are registered (and handle the utility).

    Args:
        solvers (List[str]): List of solver names.
        utility (str, optional): utility kind the solvers must handle.

    Returns:
        bool: True if all solvers are supported, False otherwise.
    """
    allowed = available_solvers if utility is None else solvers_for_utility.get(utility, [])
    for solver in solvers:
        if solver not in allowed:
            logging.critical(f'Unsupported solver \'{solver}\' for utility \'{utility}\'. Available solvers: {allowed}')
            return False
    return True
