# Scripts package for PulseFocus
