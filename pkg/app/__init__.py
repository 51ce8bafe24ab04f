# MuSCA SIC Simulator
