from os.path import abspath, dirname
import logging

logging.basicConfig(level=logging.INFO)

__version__ = '0.1.0'

ROOT_PATH = dirname(dirname(abspath(__file__)))
DATA_PATH = f'{ROOT_PATH}/data'
SRC_PATH = f'{ROOT_PATH}/src'
CONFIGS_PATH = f'{ROOT_PATH}/configs'
