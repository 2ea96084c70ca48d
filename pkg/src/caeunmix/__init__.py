"""Convolutional autoencoder for blind hyperspectral unmixing."""
