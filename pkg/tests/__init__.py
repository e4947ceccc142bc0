# PulseFocus test suite
