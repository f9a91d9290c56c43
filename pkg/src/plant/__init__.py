# DC microgrid plant simulator
