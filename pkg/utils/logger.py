import logging
import os
from pathlib import Path
from typing import Optional

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Logger:
    _instance: Optional['Logger'] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialize_logger()
        return cls._instance

    def _initialize_logger(self):
        self.logger = logging.getLogger('vshuffle')
        self.logger.setLevel(os.environ.get('VSHUFFLE_LOG_LEVEL', 'INFO').upper())
        self.logger.propagate = False
        self._file_handler: Optional[logging.FileHandler] = None

        # stderr, so stdout stays machine-readable
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(_FORMAT))
        self.logger.addHandler(console_handler)

    def configure(self, level: str = 'INFO', log_file: Optional[str] = None):
        """Apply settings from config.yaml; the env var still wins for the level."""
        self.logger.setLevel(os.environ.get('VSHUFFLE_LOG_LEVEL', level).upper())
        if self._file_handler is not None:
            self.logger.removeHandler(self._file_handler)
            self._file_handler.close()
            self._file_handler = None
        if log_file:
            log_path = Path(log_file)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            self._file_handler = logging.FileHandler(log_path)
            self._file_handler.setFormatter(logging.Formatter(_FORMAT))
            self.logger.addHandler(self._file_handler)

    @classmethod
    def get_logger(cls) -> logging.Logger:
        if cls._instance is None:
            cls()
        return cls._instance.logger
