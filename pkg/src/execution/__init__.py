# Backends: scripted mock, external engines and the toy engine
