"""
Process-level configuration for the microgrid co-simulation
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Config:
    # General
    DEBUG = os.getenv('DEBUG', 'False').lower() == 'true'
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()
    LOG_FORMAT = os.getenv('LOG_FORMAT', '%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    # Paths
    OUTPUT_DIR = os.getenv('OUTPUT_DIR', 'runs')
    DATA_DIR = os.getenv('DATA_DIR', os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data'))

    # Modbus endpoints
    MODBUS_HOST = os.getenv('MODBUS_HOST', '127.0.0.1')
    SLAVE_PORT = int(os.getenv('SLAVE_PORT', '5020'))
    PROXY_PORT = int(os.getenv('PROXY_PORT', '5021'))

    # Master behaviour
    REQUEST_TIMEOUT_MS = float(os.getenv('REQUEST_TIMEOUT_MS', '250'))
    REQUEST_RETRIES = int(os.getenv('REQUEST_RETRIES', '1'))
    RECONNECT_BACKOFF_MS = float(os.getenv('RECONNECT_BACKOFF_MS', '200'))
    RECONNECT_BACKOFF_MAX_MS = float(os.getenv('RECONNECT_BACKOFF_MAX_MS', '2000'))

    # Supervision
    HEARTBEAT_PERIOD_S = float(os.getenv('HEARTBEAT_PERIOD_S', '1.0'))
    HEARTBEAT_TIMEOUT_S = float(os.getenv('HEARTBEAT_TIMEOUT_S', '5.0'))

    @classmethod
    def validate(cls):
        """Validate configuration values"""
        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ValueError(f"LOG_LEVEL must be a logging level name, got {cls.LOG_LEVEL!r}")

        for name in ('SLAVE_PORT', 'PROXY_PORT'):
            port = getattr(cls, name)
            if not 0 < port < 65536:
                raise ValueError(f"{name} must be a TCP port number, got {port}")

        if cls.SLAVE_PORT == cls.PROXY_PORT:
            raise ValueError("SLAVE_PORT and PROXY_PORT must differ")

        if cls.REQUEST_TIMEOUT_MS <= 0 or cls.REQUEST_RETRIES < 0:
            raise ValueError("REQUEST_TIMEOUT_MS must be positive and REQUEST_RETRIES non-negative")

        if cls.RECONNECT_BACKOFF_MS <= 0 or cls.RECONNECT_BACKOFF_MAX_MS < cls.RECONNECT_BACKOFF_MS:
            raise ValueError("RECONNECT_BACKOFF_MAX_MS must be at least RECONNECT_BACKOFF_MS")

        if cls.HEARTBEAT_TIMEOUT_S <= cls.HEARTBEAT_PERIOD_S:
            raise ValueError("HEARTBEAT_TIMEOUT_S must exceed HEARTBEAT_PERIOD_S")

        return True
