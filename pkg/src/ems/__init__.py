# Energy management: horizon problem, exact dispatch and receding-horizon control
