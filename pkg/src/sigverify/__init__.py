"""Online signature verification with self-taught sparse-autoencoder features."""

__version__ = "0.1.0"
