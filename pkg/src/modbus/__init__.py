# Modbus-TCP link: framing, register map, slave and master
