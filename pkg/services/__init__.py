# Services package: bounds, simulation, adversary check, extraction, randomness tests
