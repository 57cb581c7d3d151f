"""Neural-field video stylization with composable human and scene tri-plane fields."""
__version__ = "0.1.0"
